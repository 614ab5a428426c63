"""Evaluation against a static reference, k sweeps, place aggregation and
plot-ready temporal series."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .estimator import EstimatorConfig, run_pipeline
from .ingest import CrosswalkRecord, Dataset, ReferenceTable, atomic_open, fmt_number
from .model import HourMatrix, InputError, TimeIndex

NOON_ROW = "Noon/daytime (%)"
MIDNIGHT_ROW = "Midnight/nighttime (%)"
PLACE_THRESHOLD = 0.5


@dataclass(frozen=True)
class EvalConfig:
    noon_hour: int = 12
    midnight_hour: int = 0
    weekdays_only_for_noon: bool = True
    exclude_zero_reference: bool = True
    use_absolute_difference_in_aggregate: bool = True

    def __post_init__(self):
        for h in (self.noon_hour, self.midnight_hour):
            if not 0 <= h < 24:
                raise InputError(f"hour {h} outside [0, 24)")

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown evaluation settings: {sorted(unknown)}")
        return cls(**data)


def daypart_mean(surface: HourMatrix, time: TimeIndex | None = None, hour_of_day: int = 12, weekdays_only: bool = True) -> np.ndarray:
    """Per-CBG mean of the surface at ``hour_of_day`` over the selected days."""
    time = time or surface.time
    if not 0 <= hour_of_day < 24:
        raise InputError(f"hour_of_day {hour_of_day} outside [0, 24)")
    days = np.arange(time.days)
    if weekdays_only:
        days = days[time.day_weekdays() < 5]
    if days.size == 0:
        raise InputError(f"no qualifying days in {time.label}")
    return surface.cells[days * 24 + hour_of_day].mean(axis=0)


def relative_difference(est_mean, reference_value):
    """Signed ``(estimate - reference) / reference``; scalars or arrays."""
    ref = np.asarray(reference_value, dtype=float)
    if np.any(ref == 0):
        raise ZeroDivisionError("relative difference against a zero reference")
    out = (np.asarray(est_mean, dtype=float) - ref) / ref
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class EvalReport:
    """Per-CBG relative differences and their reference-weighted aggregates.

    Excluded CBGs (zero reference) carry NaN differences.
    """

    month: str
    cbgs: tuple[str, ...]
    noon_mean: np.ndarray
    midnight_mean: np.ndarray
    daytime_reference: np.ndarray
    nighttime_reference: np.ndarray
    day_diff: np.ndarray
    night_diff: np.ndarray
    day_aggregate: float
    night_aggregate: float
    excluded_day: int
    excluded_night: int

    @property
    def day_percent(self) -> float:
        return 100.0 * self.day_aggregate

    @property
    def night_percent(self) -> float:
        return 100.0 * self.night_aggregate

    def summary(self) -> dict:
        return {
            "month": self.month,
            "noon_daytime_pct": self.day_percent,
            "midnight_nighttime_pct": self.night_percent,
            "excluded_day": self.excluded_day,
            "excluded_night": self.excluded_night,
            "n_cbgs": len(self.cbgs),
        }


def _weighted(diff: np.ndarray, weight: np.ndarray, absolute: bool) -> float:
    keep = ~np.isnan(diff)
    if not keep.any() or weight[keep].sum() <= 0:
        return float("nan")
    d = np.abs(diff[keep]) if absolute else diff[keep]
    return float(np.sum(weight[keep] * d) / np.sum(weight[keep]))


def _diffs(est: np.ndarray, ref: np.ndarray, exclude_zero: bool) -> tuple[np.ndarray, int]:
    zero = ref == 0
    if zero.any() and not exclude_zero:
        raise ZeroDivisionError("zero reference population with exclusion disabled")
    diff = np.full(est.shape, np.nan)
    diff[~zero] = relative_difference(est[~zero], ref[~zero])
    return diff, int(zero.sum())


def monthly_report(surface: HourMatrix, reference: ReferenceTable, config: EvalConfig = EvalConfig(), time: TimeIndex | None = None) -> EvalReport:
    """Weekday-noon vs daytime and midnight vs nighttime differences.

    The reference may cover a different CBG set; only shared CBGs count.
    """
    time = time or surface.time
    ids = [c for c in surface.universe.ids if c in reference.universe]
    if not ids:
        raise InputError("surface and reference share no CBGs")
    s_idx = np.array([surface.universe.index[c] for c in ids])
    r_idx = np.array([reference.universe.index[c] for c in ids])
    noon = daypart_mean(surface, time, config.noon_hour, config.weekdays_only_for_noon)[s_idx]
    midnight = daypart_mean(surface, time, config.midnight_hour, False)[s_idx]
    day_ref = reference.daytime[r_idx]
    night_ref = reference.nighttime[r_idx]
    day_diff, ex_day = _diffs(noon, day_ref, config.exclude_zero_reference)
    night_diff, ex_night = _diffs(midnight, night_ref, config.exclude_zero_reference)
    absolute = config.use_absolute_difference_in_aggregate
    return EvalReport(
        month=time.label,
        cbgs=tuple(ids),
        noon_mean=noon,
        midnight_mean=midnight,
        daytime_reference=day_ref,
        nighttime_reference=night_ref,
        day_diff=day_diff,
        night_diff=night_diff,
        day_aggregate=_weighted(day_diff, day_ref, absolute),
        night_aggregate=_weighted(night_diff, night_ref, absolute),
        excluded_day=ex_day,
        excluded_night=ex_night,
    )


def _pct(x: float) -> str:
    return "nan" if np.isnan(x) else f"{x:.1f}"


def write_report(path, reports: Sequence[EvalReport]) -> None:
    """Month columns by noon/midnight rows, percentages to one decimal."""
    header = ["Month"] + [str(int(r.month.split("-")[1])) for r in reports]
    with atomic_open(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerow([NOON_ROW] + [_pct(r.day_percent) for r in reports])
        writer.writerow([MIDNIGHT_ROW] + [_pct(r.night_percent) for r in reports])


def read_report(path) -> dict[str, list[str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return {row[0]: row[1:] for row in rows}


# --------------------------------------------------------------------------
# k sweep


@dataclass(frozen=True)
class SweepRow:
    k: float
    report: EvalReport | None
    inbound_total: float
    subfloor_cbg_fraction: float
    negative_cbg_fraction: float
    clamped_cells: int

    @property
    def inbound_per_k(self) -> float:
        return self.inbound_total / self.k


def sweep_k(
    dataset: Dataset,
    k_values: Iterable[float] = (4.0,),
    reference: ReferenceTable | None = None,
    config: EstimatorConfig = EstimatorConfig(),
    eval_config: EvalConfig = EvalConfig(),
) -> list[SweepRow]:
    """Re-run the pipeline per ``k``; evaluate when a reference is available."""
    k_values = list(k_values)
    if not k_values:
        raise InputError("at least one k value is required")
    reference = reference if reference is not None else dataset.reference
    rows = []
    for k in k_values:
        result = run_pipeline(dataset, replace(config, k=float(k)))
        pre = result.diagnostics["pre_rebalance"]
        report = monthly_report(result.population, reference, eval_config) if reference is not None else None
        rows.append(
            SweepRow(
                k=float(k),
                report=report,
                inbound_total=result.diagnostics["inbound_total"],
                subfloor_cbg_fraction=pre["subfloor_cbg_fraction"],
                negative_cbg_fraction=pre["negative_cbg_fraction"],
                clamped_cells=result.surface.clamped_cells,
            )
        )
    return rows


def inbound_linearity(rows: Sequence[SweepRow]) -> float:
    """Largest relative spread of inbound-per-k across sweep rows (0 when linear)."""
    per_k = np.array([r.inbound_per_k for r in rows])
    if per_k.size < 2 or per_k.max() == 0:
        return 0.0
    return float((per_k.max() - per_k.min()) / per_k.max())


def write_sweep(path, rows: Sequence[SweepRow]) -> None:
    header = [
        "k",
        "noon_daytime_pct",
        "midnight_nighttime_pct",
        "inbound_total",
        "inbound_per_k",
        "negative_cbg_fraction",
        "subfloor_cbg_fraction",
        "clamped_cells",
    ]
    with atomic_open(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in rows:
            day = _pct(r.report.day_percent) if r.report else ""
            night = _pct(r.report.night_percent) if r.report else ""
            writer.writerow(
                [
                    fmt_number(r.k),
                    day,
                    night,
                    repr(r.inbound_total),
                    repr(r.inbound_per_k),
                    repr(r.negative_cbg_fraction),
                    repr(r.subfloor_cbg_fraction),
                    r.clamped_cells,
                ]
            )


# --------------------------------------------------------------------------
# places


@dataclass(frozen=True)
class PlaceSeries:
    place: str
    time: TimeIndex
    values: np.ndarray
    members: tuple[str, ...]


@dataclass(frozen=True)
class PlaceAggregation:
    places: dict[str, PlaceSeries]
    unassigned: tuple[str, ...]
    unassigned_values: np.ndarray = field(repr=False)

    def __getitem__(self, place: str) -> PlaceSeries:
        return self.places[place]


def assign_places(crosswalk: Iterable[CrosswalkRecord], threshold: float = PLACE_THRESHOLD) -> dict[str, str]:
    """CBG -> place for CBGs with strictly more than ``threshold`` of their area inside."""
    assigned: dict[str, str] = {}
    for rec in crosswalk:
        if rec.area_fraction > threshold:
            if rec.cbg in assigned and assigned[rec.cbg] != rec.place:
                raise InputError(f"{rec.cbg} has more than half its area in two places")
            assigned[rec.cbg] = rec.place
    return assigned


def aggregate_places(surface: HourMatrix, crosswalk: Iterable[CrosswalkRecord]) -> PlaceAggregation:
    """Sum whole CBG series into places; no fractional weighting."""
    assigned = assign_places(crosswalk)
    members: dict[str, list[int]] = {}
    for c, cbg in enumerate(surface.universe.ids):
        place = assigned.get(cbg)
        if place is not None:
            members.setdefault(place, []).append(c)
    cells = surface.cells
    places = {
        place: PlaceSeries(
            place, surface.time, cells[:, idx].sum(axis=1), tuple(surface.universe.ids[i] for i in idx)
        )
        for place, idx in sorted(members.items())
    }
    rest = [c for c, cbg in enumerate(surface.universe.ids) if cbg not in assigned]
    return PlaceAggregation(
        places, tuple(surface.universe.ids[i] for i in rest), cells[:, rest].sum(axis=1)
    )


def write_places(path, aggregation: PlaceAggregation) -> None:
    with atomic_open(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["place", "hour", "population"])
        for place, series in aggregation.places.items():
            for t, v in enumerate(series.values):
                writer.writerow([place, t, repr(float(v))])


# --------------------------------------------------------------------------
# temporal series


@dataclass(frozen=True)
class DailySeries:
    """Trailing 24-hour means; ``end_hours[i]`` is the last hour in window ``i``."""

    values: np.ndarray
    end_hours: np.ndarray
    window: int = 24


def daily_series(hourly: Sequence[float], window: int = 24) -> DailySeries:
    x = np.asarray(hourly, dtype=float)
    if x.ndim != 1 or x.size < window:
        raise InputError(f"need at least {window} hourly values, got {x.size}")
    means = np.lib.stride_tricks.sliding_window_view(x, window).mean(axis=1)
    return DailySeries(means, np.arange(window - 1, x.size), window)


def calendar_day_means(hourly: Sequence[float]) -> np.ndarray:
    """Daily series sampled at each day's last hour, i.e. the mean of each calendar day."""
    series = daily_series(hourly)
    return series.values[::24]


def export_profile(source, selection: Sequence[str], path, *, daily: bool = False) -> int:
    """Write ``timestamp,label,value`` rows for CBGs of a surface or for places.

    ``source`` is an :class:`HourMatrix` (labels are CBG ids) or a
    :class:`PlaceAggregation` (labels are place ids). Returns the row count.
    """
    selection = list(selection)
    if not selection:
        raise InputError("empty selection")
    series: list[tuple[str, TimeIndex, np.ndarray]] = []
    for label in selection:
        if isinstance(source, HourMatrix):
            if label not in source.universe:
                raise InputError(f"unknown CBG {label!r}")
            series.append((label, source.time, source.column(label)))
        else:
            places = source.places if isinstance(source, PlaceAggregation) else source
            if label not in places:
                raise InputError(f"unknown place {label!r}")
            s = places[label]
            series.append((label, s.time, s.values))

    count = 0
    with atomic_open(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "label", "value"])
        for label, time, values in series:
            if daily:
                ds = daily_series(values)
                hours, vals = ds.end_hours, ds.values
            else:
                hours, vals = np.arange(values.size), values
            for t, v in zip(hours, vals):
                writer.writerow([time.timestamp(int(t)), label, repr(float(v))])
                count += 1
    return count
