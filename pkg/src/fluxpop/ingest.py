"""CSV schemas for patterns, panel, population, reference and crosswalk tables.

Every file is UTF-8 CSV with a header row. Nested cells of ``patterns.csv``
(the hourly stop array and the origin map) are JSON strings. Counts are
read as non-negative finite reals: expected-value observations are not
integral, and integral values are written back without a decimal point.
"""

from __future__ import annotations

import contextlib
import csv
import gzip
import io
import json
import logging
import math
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
import scipy.sparse as sp

from .model import (
    HourMatrix,
    InputError,
    PopulationTable,
    TimeIndex,
    Universe,
    build_universe,
    parse_month,
)

log = logging.getLogger(__name__)

PATTERNS_HEADER = ("cbg", "month", "hourly_stops", "median_dwell_minutes", "origin_devices", "total_origin_devices")
PANEL_HEADER = ("cbg", "panel_devices")
POPULATION_HEADER = ("cbg", "population")
REFERENCE_HEADER = ("cbg", "daytime_pop", "nighttime_pop")
CROSSWALK_HEADER = ("cbg", "place", "area_fraction")
SURFACE_HEADER = ("cbg", "hour", "population")

AREA_SLACK = 1e-9


# --------------------------------------------------------------------------
# number formatting and file plumbing


def fmt_number(x: float) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(x)


def _parse_number(raw, what: str, where: str, *, allow_negative: bool = False) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise InputError(f"{where}: {what} is not numeric ({raw!r})") from None
    if not math.isfinite(value):
        raise InputError(f"{where}: {what} is not finite ({raw!r})")
    if value < 0 and not allow_negative:
        raise InputError(f"{where}: {what} is negative ({raw!r})")
    return value


def _open_text(path: Path, mode: str = "r"):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def _read_rows(path: str | os.PathLike, header: tuple[str, ...]) -> Iterator[tuple[int, dict[str, str]]]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing file {path}")
    with _open_text(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputError(f"{path}: empty file")
        missing = [col for col in header if col not in reader.fieldnames]
        if missing:
            raise InputError(f"{path}: missing columns {missing}")
        for row in reader:
            # header is line 1
            yield reader.line_num, row


@contextlib.contextmanager
def atomic_open(path: str | os.PathLike):
    """Text handle whose content replaces ``path`` only on successful exit.

    A ``.gz`` suffix writes gzip with a fixed mtime so output stays
    byte-reproducible.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as raw:
            if path.suffix == ".gz":
                with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as gz:
                    with io.TextIOWrapper(gz, encoding="utf-8", newline="") as fh:
                        yield fh
            else:
                with io.TextIOWrapper(raw, encoding="utf-8", newline="") as fh:
                    yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _write_csv(path, header, rows) -> None:
    with atomic_open(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# --------------------------------------------------------------------------
# patterns


@dataclass(frozen=True)
class PatternsRecord:
    """One destination CBG's monthly observations."""

    cbg: str
    hourly_stops: np.ndarray
    median_dwell_minutes: float
    origin_devices: dict[str, float]
    total_origin_devices: float

    def origin_ratios(self) -> dict[str, float]:
        if self.total_origin_devices <= 0:
            return {j: 0.0 for j in self.origin_devices}
        return {j: d / self.total_origin_devices for j, d in self.origin_devices.items()}


@dataclass(frozen=True)
class PatternsTable:
    """Columnar patterns for a whole universe.

    ``stops`` is ``tau x n`` raw hourly stops by destination; ``origins`` is
    a sparse ``n x n`` matrix with destinations as rows and origins as
    columns (the monthly device counts); ``totals`` is the per-destination
    total of stopped devices as reported by the provider.
    """

    universe: Universe
    time: TimeIndex
    stops: np.ndarray
    dwell_minutes: np.ndarray
    origins: sp.csr_matrix
    totals: np.ndarray
    dropped_origins: int = 0
    unknown_rows: tuple[str, ...] = ()

    def __post_init__(self):
        n, tau = self.universe.n, self.time.tau
        if self.stops.shape != (tau, n):
            raise InputError(f"stops have shape {self.stops.shape}, expected {(tau, n)}")
        if self.origins.shape != (n, n):
            raise InputError(f"origin map has shape {self.origins.shape}, expected {(n, n)}")
        if self.dwell_minutes.shape != (n,) or self.totals.shape != (n,):
            raise InputError("dwell/total arrays misaligned with universe")
        for arr in (self.stops, self.dwell_minutes, self.totals):
            arr.setflags(write=False)

    def record(self, cbg: str) -> PatternsRecord:
        c = self.universe.ordinal(cbg)
        row = self.origins.getrow(c)
        ids = self.universe.ids
        return PatternsRecord(
            cbg=cbg,
            hourly_stops=self.stops[:, c],
            median_dwell_minutes=float(self.dwell_minutes[c]),
            origin_devices={ids[j]: float(v) for j, v in zip(row.indices, row.data)},
            total_origin_devices=float(self.totals[c]),
        )

    def records(self) -> Iterator[PatternsRecord]:
        for cbg in self.universe.ids:
            yield self.record(cbg)

    def stops_matrix(self) -> HourMatrix:
        return HourMatrix(self.time, self.universe, self.stops)


def patterns_from_arrays(universe, time, stops, dwell_minutes, origins, totals=None, **extra) -> PatternsTable:
    """Build a table from arrays; ``totals`` default to the origin-map row sums."""
    origins = sp.csr_matrix(origins, dtype=float)
    origins.sum_duplicates()
    origins.eliminate_zeros()
    origins.sort_indices()
    if totals is None:
        totals = np.asarray(origins.sum(axis=1)).ravel()
    return PatternsTable(
        universe,
        time,
        np.array(stops, dtype=float),
        np.array(dwell_minutes, dtype=float),
        origins,
        np.array(totals, dtype=float),
        **extra,
    )


def load_patterns(path, universe: Universe, time: TimeIndex | None = None, *, strict: bool = False) -> PatternsTable:
    """Read ``patterns.csv``.

    Rows for destinations outside ``universe`` raise when ``strict`` and are
    otherwise skipped and listed in ``unknown_rows``. Origins outside the
    universe are always dropped and counted in ``dropped_origins``.
    CBGs without a row have no observed stops.
    """
    n = universe.n
    stops = None
    dwell = np.zeros(n)
    totals = np.zeros(n)
    seen: set[str] = set()
    unknown: list[str] = []
    dropped = 0
    coo_rows: list[int] = []
    coo_cols: list[int] = []
    coo_vals: list[float] = []

    for line, row in _read_rows(path, PATTERNS_HEADER):
        where = f"{path}:{line}"
        cbg = row["cbg"]
        month = parse_month(row["month"])
        if time is None:
            time = month
        elif (month.year, month.month) != (time.year, time.month):
            raise InputError(f"{where}: month {row['month']} does not match {time.label}")
        if stops is None:
            stops = np.zeros((time.tau, n))
        if cbg not in universe:
            if strict:
                raise InputError(f"{where}: unknown CBG {cbg!r}")
            unknown.append(cbg)
            continue
        if cbg in seen:
            raise InputError(f"{where}: duplicate row for {cbg}")
        seen.add(cbg)
        c = universe.index[cbg]

        try:
            hourly = json.loads(row["hourly_stops"])
            origin_map = json.loads(row["origin_devices"] or "{}")
        except json.JSONDecodeError as exc:
            raise InputError(f"{where}: bad JSON cell ({exc.msg})") from None
        if not isinstance(hourly, list):
            raise InputError(f"{where}: hourly_stops must be a JSON array")
        if len(hourly) != time.tau:
            raise InputError(f"{where}: expected {time.tau} hourly values, got {len(hourly)}")
        if not isinstance(origin_map, dict):
            raise InputError(f"{where}: origin_devices must be a JSON object")
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in hourly):
            raise InputError(f"{where}: hourly_stops must hold numbers")
        values = np.asarray(hourly, dtype=float)
        if not np.all(np.isfinite(values)):
            raise InputError(f"{where}: non-finite hourly stop count")
        if np.any(values < 0):
            raise InputError(f"{where}: negative hourly stop count")
        stops[:, c] = values
        dwell[c] = _parse_number(row["median_dwell_minutes"], "median_dwell_minutes", where)
        totals[c] = _parse_number(row["total_origin_devices"], "total_origin_devices", where)

        for origin, count in origin_map.items():
            if isinstance(count, bool):
                raise InputError(f"{where}: origin count for {origin} is not numeric")
            count = _parse_number(count, f"origin count for {origin}", where)
            j = universe.index.get(origin)
            if j is None:
                dropped += 1
                continue
            coo_rows.append(c)
            coo_cols.append(j)
            coo_vals.append(count)

    if time is None:
        raise InputError(f"{path}: no rows and no month given")
    if stops is None:
        stops = np.zeros((time.tau, n))
    if dropped:
        log.warning("%s: dropped %d origin entries outside the universe", path, dropped)
    if unknown:
        log.warning("%s: skipped %d rows for unknown CBGs", path, len(unknown))
    origins = sp.coo_matrix((coo_vals, (coo_rows, coo_cols)), shape=(n, n)).tocsr()
    return patterns_from_arrays(
        universe, time, stops, dwell, origins, totals, dropped_origins=dropped, unknown_rows=tuple(unknown)
    )


def write_patterns(path, table: PatternsTable) -> None:
    ids = table.universe.ids
    label = table.time.label
    origins = table.origins.tocsr()

    def rows():
        for c, cbg in enumerate(ids):
            hourly = "[" + ",".join(fmt_number(v) for v in table.stops[:, c]) + "]"
            lo, hi = origins.indptr[c], origins.indptr[c + 1]
            pairs = sorted(zip(origins.indices[lo:hi], origins.data[lo:hi]))
            omap = "{" + ",".join(f"{json.dumps(ids[j])}:{fmt_number(v)}" for j, v in pairs) + "}"
            yield (cbg, label, hourly, fmt_number(table.dwell_minutes[c]), omap, fmt_number(table.totals[c]))

    _write_csv(path, PATTERNS_HEADER, rows())


# --------------------------------------------------------------------------
# flat tables


def _load_flat(path, universe: Universe, header, columns, *, strict: bool, require_all: bool):
    out = np.zeros((universe.n, len(columns)))
    seen = np.zeros(universe.n, dtype=bool)
    unknown: list[str] = []
    for line, row in _read_rows(path, header):
        where = f"{path}:{line}"
        cbg = row["cbg"]
        if cbg not in universe:
            if strict:
                raise InputError(f"{where}: unknown CBG {cbg!r}")
            unknown.append(cbg)
            continue
        c = universe.index[cbg]
        if seen[c]:
            raise InputError(f"{where}: duplicate row for {cbg}")
        seen[c] = True
        for k, col in enumerate(columns):
            out[c, k] = _parse_number(row[col], col, where)
    if require_all and not seen.all():
        missing = [universe.ids[i] for i in np.flatnonzero(~seen)]
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise InputError(f"{path}: missing {len(missing)} CBGs: {shown}")
    if unknown:
        log.warning("%s: skipped %d rows for unknown CBGs", path, len(unknown))
    return out, tuple(unknown)


@dataclass(frozen=True)
class PanelTable:
    """Tracked panel devices per home CBG."""

    universe: Universe
    devices: np.ndarray

    def __post_init__(self):
        self.devices.setflags(write=False)

    @property
    def zero_panel(self) -> np.ndarray:
        return self.devices <= 0


def load_panel(path, universe: Universe, *, strict: bool = False) -> PanelTable:
    """Read ``panel.csv``; CBGs without a row have zero panel devices."""
    values, _ = _load_flat(path, universe, PANEL_HEADER, ("panel_devices",), strict=strict, require_all=False)
    return PanelTable(universe, values[:, 0].copy())


def write_panel(path, panel: PanelTable) -> None:
    _write_csv(path, PANEL_HEADER, ((cbg, fmt_number(v)) for cbg, v in zip(panel.universe.ids, panel.devices)))


def read_population_ids(path) -> list[str]:
    """CBG ids of ``population.csv`` in file order; this defines the universe."""
    return [row["cbg"] for _, row in _read_rows(path, POPULATION_HEADER)]


def load_population(path, universe: Universe, *, strict: bool = False) -> PopulationTable:
    values, _ = _load_flat(path, universe, POPULATION_HEADER, ("population",), strict=strict, require_all=True)
    return PopulationTable(universe, values[:, 0])


def write_population(path, table: PopulationTable) -> None:
    _write_csv(path, POPULATION_HEADER, ((cbg, fmt_number(v)) for cbg, v in zip(table.universe.ids, table.values)))


@dataclass(frozen=True)
class ReferenceRecord:
    cbg: str
    daytime_pop: float
    nighttime_pop: float


@dataclass(frozen=True)
class ReferenceTable:
    """Static daytime/nighttime reference population per CBG."""

    universe: Universe
    daytime: np.ndarray
    nighttime: np.ndarray

    def __post_init__(self):
        for arr in (self.daytime, self.nighttime):
            if arr.shape != (self.universe.n,):
                raise InputError("reference misaligned with universe")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise InputError("reference values must be finite and non-negative")
            arr.setflags(write=False)

    def record(self, cbg: str) -> ReferenceRecord:
        c = self.universe.ordinal(cbg)
        return ReferenceRecord(cbg, float(self.daytime[c]), float(self.nighttime[c]))


def load_reference(path, universe: Universe, *, strict: bool = False) -> ReferenceTable:
    values, _ = _load_flat(
        path, universe, REFERENCE_HEADER, ("daytime_pop", "nighttime_pop"), strict=strict, require_all=True
    )
    return ReferenceTable(universe, values[:, 0].copy(), values[:, 1].copy())


def write_reference(path, table: ReferenceTable) -> None:
    rows = (
        (cbg, fmt_number(d), fmt_number(nt))
        for cbg, d, nt in zip(table.universe.ids, table.daytime, table.nighttime)
    )
    _write_csv(path, REFERENCE_HEADER, rows)


@dataclass(frozen=True)
class CrosswalkRecord:
    cbg: str
    place: str
    area_fraction: float


def load_crosswalk(path, universe: Universe, *, strict: bool = False) -> tuple[CrosswalkRecord, ...]:
    """Read ``crosswalk.csv``: the share of each CBG's area inside each place."""
    records: list[CrosswalkRecord] = []
    pairs: set[tuple[str, str]] = set()
    per_cbg: Counter = Counter()
    for line, row in _read_rows(path, CROSSWALK_HEADER):
        where = f"{path}:{line}"
        cbg, place = row["cbg"], row["place"]
        if cbg not in universe:
            if strict:
                raise InputError(f"{where}: unknown CBG {cbg!r}")
            log.warning("%s: crosswalk row for unknown CBG %s skipped", where, cbg)
            continue
        if not place:
            raise InputError(f"{where}: empty place id")
        frac = _parse_number(row["area_fraction"], "area_fraction", where)
        if frac > 1.0:
            raise InputError(f"{where}: area_fraction {frac} exceeds 1")
        if (cbg, place) in pairs:
            raise InputError(f"{where}: duplicate pair ({cbg}, {place})")
        pairs.add((cbg, place))
        per_cbg[cbg] += frac
        if per_cbg[cbg] > 1.0 + AREA_SLACK:
            raise InputError(f"{where}: area fractions for {cbg} sum to {per_cbg[cbg]:.6g} > 1")
        records.append(CrosswalkRecord(cbg, place, frac))
    return tuple(records)


def write_crosswalk(path, records) -> None:
    _write_csv(path, CROSSWALK_HEADER, ((r.cbg, r.place, fmt_number(r.area_fraction)) for r in records))


# --------------------------------------------------------------------------
# estimated surfaces


def write_surface(path, surface: HourMatrix) -> None:
    """Write ``cbg,hour,population`` rows, CBG-major, one per (cbg, hour)."""
    cells = surface.cells

    def rows():
        for c, cbg in enumerate(surface.universe.ids):
            for t in range(surface.time.tau):
                yield (cbg, t, repr(float(cells[t, c])))

    _write_csv(path, SURFACE_HEADER, rows())


def load_surface(path, universe: Universe, time: TimeIndex) -> HourMatrix:
    cells = np.full((time.tau, universe.n), np.nan)
    for line, row in _read_rows(path, SURFACE_HEADER):
        where = f"{path}:{line}"
        c = universe.index.get(row["cbg"])
        if c is None:
            raise InputError(f"{where}: unknown CBG {row['cbg']!r}")
        try:
            t = int(row["hour"])
        except ValueError:
            raise InputError(f"{where}: bad hour {row['hour']!r}") from None
        if not 0 <= t < time.tau:
            raise InputError(f"{where}: hour {t} outside month")
        cells[t, c] = _parse_number(row["population"], "population", where, allow_negative=True)
    if np.isnan(cells).any():
        raise InputError(f"{path}: surface is missing (cbg, hour) rows")
    return HourMatrix(time, universe, cells)


# --------------------------------------------------------------------------
# dataset


@dataclass(frozen=True)
class Dataset:
    universe: Universe
    time: TimeIndex
    patterns: PatternsTable
    panel: PanelTable
    population: PopulationTable
    reference: ReferenceTable | None = None
    crosswalk: tuple[CrosswalkRecord, ...] | None = None

    def __post_init__(self):
        for name in ("patterns", "panel", "population", "reference"):
            table = getattr(self, name)
            if table is not None and table.universe is not self.universe:
                if table.universe.ids != self.universe.ids:
                    raise InputError(f"{name} is aligned to a different universe")
        if (self.patterns.time.year, self.patterns.time.month) != (self.time.year, self.time.month):
            raise InputError("patterns month differs from dataset month")


def load_dataset(paths: Mapping[str, str | os.PathLike], *, strict: bool = False) -> Dataset:
    """Load a dataset; the universe is the CBG list of ``population.csv``.

    ``paths`` needs ``patterns``, ``panel`` and ``population``; ``reference``
    and ``crosswalk`` are optional.
    """
    for key in ("patterns", "panel", "population"):
        if not paths.get(key):
            raise InputError(f"missing input: {key}")
        if not Path(paths[key]).exists():
            raise InputError(f"missing input: {key} ({paths[key]})")
    universe = build_universe(read_population_ids(paths["population"]))
    population = load_population(paths["population"], universe, strict=strict)
    patterns = load_patterns(paths["patterns"], universe, strict=strict)
    panel = load_panel(paths["panel"], universe, strict=strict)
    reference = crosswalk = None
    if paths.get("reference"):
        if not Path(paths["reference"]).exists():
            raise InputError(f"missing input: reference ({paths['reference']})")
        reference = load_reference(paths["reference"], universe, strict=strict)
    if paths.get("crosswalk"):
        if not Path(paths["crosswalk"]).exists():
            raise InputError(f"missing input: crosswalk ({paths['crosswalk']})")
        crosswalk = load_crosswalk(paths["crosswalk"], universe, strict=strict)
    return Dataset(universe, patterns.time, patterns, panel, population, reference, crosswalk)


@dataclass(frozen=True)
class Issue:
    code: str
    message: str
    cbgs: tuple[str, ...] = ()


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...]
    coverage: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.issues

    def to_dict(self) -> dict:
        return {
            "issues": [{"code": i.code, "message": i.message, "cbgs": list(i.cbgs)} for i in self.issues],
            "coverage": self.coverage,
        }


def validate_dataset(dataset: Dataset, stop_ratio_factor: float = 10.0) -> ValidationReport:
    """Cross-check the loaded tables. Report only; never mutates."""
    ids = dataset.universe.ids
    pat = dataset.patterns
    issues: list[Issue] = []

    def named(mask) -> tuple[str, ...]:
        return tuple(ids[i] for i in np.flatnonzero(mask))

    stop_sums = pat.stops.sum(axis=0)
    if not stop_sums.any():
        issues.append(Issue("degenerate_month", "degenerate month: no stops observed in any CBG"))

    zero_panel = dataset.panel.zero_panel & (dataset.population.values > 0)
    if zero_panel.any():
        issues.append(Issue("zero_panel", "zero panel: fallback P applies", named(zero_panel)))

    totals = pat.totals
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(totals > 0, stop_sums / totals, np.inf)
    off = ((stop_sums > 0) | (totals > 0)) & ((ratio > stop_ratio_factor) | (ratio < 1.0 / stop_ratio_factor))
    if off.any():
        issues.append(
            Issue(
                "stop_total_mismatch",
                f"hourly stop sum differs from total_origin_devices by more than {stop_ratio_factor:g}x",
                named(off),
            )
        )

    map_sums = np.asarray(pat.origins.sum(axis=1)).ravel()
    excess = map_sums > totals * (1 + 1e-9) + 1e-9
    if excess.any():
        issues.append(Issue("origin_excess", "origin device counts exceed total_origin_devices", named(excess)))

    if pat.dropped_origins:
        issues.append(Issue("orphan_origins", f"{pat.dropped_origins} origin entries outside the universe dropped"))
    if pat.unknown_rows:
        issues.append(
            Issue("unknown_rows", f"{len(pat.unknown_rows)} patterns rows for unknown CBGs", tuple(pat.unknown_rows))
        )

    pop = dataset.population.values
    coverage = {
        "n_cbgs": dataset.universe.n,
        "hours": dataset.time.tau,
        "cbgs_with_stops": int((stop_sums > 0).sum()),
        "cbgs_with_panel": int((dataset.panel.devices > 0).sum()),
        "total_stops": float(stop_sums.sum()),
        "origin_entries": int(pat.origins.nnz),
        "panel_sampling_rate": float(dataset.panel.devices.sum() / pop.sum()) if pop.sum() > 0 else 0.0,
    }
    return ValidationReport(tuple(issues), coverage)
