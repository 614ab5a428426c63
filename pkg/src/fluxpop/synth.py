"""Synthetic agent worlds and the smartphone-panel observation model.

Agents are held as cohorts: identical agents sharing a home CBG and an
itinerary. An itinerary is a set of legs ``(destination, schedule)`` whose
schedules are disjoint hour masks over the month; outside every leg the
agent is at home. Agents move on whole hours only.

Observation turns a world into the ingest tables. Each agent is enrolled
in the device panel with its home CBG's sampling rate, either as an exact
expectation (``expected`` mode) or by binomial draws (``sampled`` mode).
An enrolled agent on a leg records one stop per present hour
(``presence`` stops) or one stop at each arrival (``arrival`` stops).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .ingest import (
    CrosswalkRecord,
    PanelTable,
    PatternsTable,
    ReferenceTable,
    patterns_from_arrays,
    write_crosswalk,
    write_panel,
    write_patterns,
    write_population,
    write_reference,
    write_surface,
)
from .model import HourMatrix, InputError, PopulationTable, TimeIndex, Universe, build_time_index, build_universe

ARCHETYPES = (
    "resident",
    "commuter",
    "night_worker",
    "student",
    "campus_commuter",
    "tourist",
    "festival_visitor",
    "shopper",
)

# archetype -> ((leg pool, schedule), ...)
ITINERARIES: dict[str, tuple[tuple[str, str], ...]] = {
    "resident": (),
    "commuter": (("work", "commute"),),
    "night_worker": (("work", "night_shift"),),
    "student": (("campus", "campus"), ("family", "break_away")),
    "campus_commuter": (("campus", "campus"),),
    "tourist": (("attraction", "weekend_trip"),),
    "festival_visitor": (("venue", "festival"),),
    "shopper": (("shop", "errand"),),
}

SEASONAL_TOURISM = (0.05, 0.05, 0.1, 0.2, 0.45, 0.8, 1.0, 1.0, 0.5, 0.2, 0.1, 0.1)


@dataclass(frozen=True)
class SynthConfig:
    preset: str = "metro"
    n_cbgs: int | None = None
    population_range: tuple[int, int] = (800, 1500)
    archetype_weights: Mapping[str, float] | None = None
    sampling_rate: float = 0.1
    sampling_rate_spread: float = 0.0
    year: int = 2022
    month: int = 1
    months: int = 1
    rng_seed: int = 0
    observation_mode: str = "expected"
    stop_mode: str = "presence"
    origin_count: str = "stops"
    presence_dwell_minutes: float = 30.0
    truncate_below: float = 0.0
    local_trip_share: float = 0.0
    destinations_per_group: int = 3
    days: int | None = None
    festival_day: int | None = None
    break_start_day: int = 21

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise InputError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if not 0 < self.sampling_rate <= 1:
            raise InputError("sampling_rate must be in (0, 1]")
        if not 0 <= self.sampling_rate_spread < 1:
            raise InputError("sampling_rate_spread must be in [0, 1)")
        lo, hi = self.population_range
        if lo < 0 or hi < lo:
            raise InputError("population_range must satisfy 0 <= lo <= hi")
        if self.months < 1 or not 1 <= self.month <= 12:
            raise InputError("months must be >= 1 and month in 1..12")
        if self.observation_mode not in ("expected", "sampled"):
            raise InputError(f"observation_mode must be expected or sampled, got {self.observation_mode!r}")
        if self.stop_mode not in ("presence", "arrival"):
            raise InputError(f"stop_mode must be presence or arrival, got {self.stop_mode!r}")
        if self.origin_count not in ("stops", "devices"):
            raise InputError(f"origin_count must be stops or devices, got {self.origin_count!r}")
        if not 0 <= self.local_trip_share <= 1:
            raise InputError("local_trip_share must be in [0, 1]")
        if self.destinations_per_group < 1:
            raise InputError("destinations_per_group must be >= 1")
        if self.presence_dwell_minutes >= 60 or self.presence_dwell_minutes < 0:
            raise InputError("presence_dwell_minutes must be in [0, 60)")
        if self.archetype_weights is not None:
            _check_weights(self.archetype_weights)
        object.__setattr__(self, "population_range", (int(lo), int(hi)))

    @classmethod
    def from_dict(cls, data: Mapping) -> "SynthConfig":
        data = dict(data)
        if "seed" in data:
            data["rng_seed"] = data.pop("seed")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown synth settings: {sorted(unknown)}")
        if "population_range" in data:
            data["population_range"] = tuple(data["population_range"])
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["population_range"] = list(self.population_range)
        if self.archetype_weights is not None:
            out["archetype_weights"] = dict(self.archetype_weights)
        return out


def _check_weights(weights: Mapping[str, float]) -> None:
    unknown = set(weights) - set(ARCHETYPES)
    if unknown:
        raise InputError(f"unknown archetypes {sorted(unknown)}")
    if any(w < 0 for w in weights.values()):
        raise InputError("archetype weights must be non-negative")
    if abs(sum(weights.values()) - 1.0) > 1e-9:
        raise InputError(f"archetype weights sum to {sum(weights.values())}, expected 1")


# --------------------------------------------------------------------------
# schedules


def schedule_mask(name: str, time: TimeIndex, *, festival_day: int = 0, break_start_day: int = 21) -> np.ndarray:
    """Boolean hour mask for a named schedule within one month."""
    hod = time.hour_of_day()
    day = np.arange(time.tau) // 24
    weekday = time.is_weekday_hour()
    if name == "commute":
        return weekday & (hod >= 8) & (hod < 18)
    if name == "night_shift":
        # shift starts 22:00 on a weekday and ends 06:00 the next day
        prev_weekday = np.repeat(((time.first_weekday + np.arange(time.days) - 1) % 7) < 5, 24)
        return (weekday & (hod >= 22)) | (prev_weekday & (hod < 6))
    if name == "campus":
        return weekday & (hod >= 9) & (hod < 16) & (day < break_start_day)
    if name == "break_away":
        return day >= break_start_day
    if name == "weekend_trip":
        return ~weekday & (hod >= 10) & (hod < 18)
    if name == "festival":
        return (day == festival_day) & (hod >= 10) & (hod < 22)
    if name == "errand":
        return (np.repeat(time.day_weekdays(), 24) == 5) & (hod >= 13) & (hod < 15)
    raise InputError(f"unknown schedule {name!r}")


def default_festival_day(time: TimeIndex) -> int:
    """Fourth Saturday of the month (0-based day)."""
    saturdays = np.flatnonzero(time.day_weekdays() == 5)
    return int(saturdays[min(3, saturdays.size - 1)]) if saturdays.size else 0


def arrivals(mask: np.ndarray) -> np.ndarray:
    prev = np.concatenate(([False], mask[:-1]))
    return mask & ~prev


def run_lengths(mask: np.ndarray) -> np.ndarray:
    """Lengths of the contiguous True runs of ``mask``."""
    padded = np.concatenate(([0], mask.astype(np.int8), [0]))
    edges = np.diff(padded)
    return np.flatnonzero(edges == -1) - np.flatnonzero(edges == 1)


# --------------------------------------------------------------------------
# layouts


@dataclass
class Zone:
    """Homes sharing an archetype mix and destination pools."""

    homes: np.ndarray
    mix: dict[str, float]
    pools: dict[str, tuple[np.ndarray, np.ndarray]]


@dataclass
class Layout:
    ids: tuple[str, ...]
    population: np.ndarray
    zones: list[Zone]
    crosswalk: tuple[CrosswalkRecord, ...] = ()
    seasonal: tuple[float, ...] | None = None
    meta: dict = field(default_factory=dict)


def _ids(n: int) -> tuple[str, ...]:
    # 12-digit census-style codes
    return tuple(f"{360610001001 + i:012d}" for i in range(n))


def _pool(idx, weight=None) -> tuple[np.ndarray, np.ndarray]:
    idx = np.asarray(idx, dtype=int)
    w = np.ones(idx.size) if weight is None else np.broadcast_to(np.asarray(weight, dtype=float), idx.shape).copy()
    return idx, w


def _merge(*pools) -> tuple[np.ndarray, np.ndarray]:
    return np.concatenate([p[0] for p in pools]), np.concatenate([p[1] for p in pools])


def _pops(rng, size, lo, hi) -> np.ndarray:
    return rng.integers(lo, hi + 1, size=size).astype(float)


def _crosswalk(ids, name, members, rng, edge=None) -> tuple[CrosswalkRecord, ...]:
    fracs = np.round(rng.uniform(0.6, 1.0, size=len(members)), 3)
    recs = [CrosswalkRecord(ids[m], name, float(f)) for m, f in zip(members, fracs)]
    if edge is not None:
        # a boundary CBG with exactly half its area inside stays out
        recs.append(CrosswalkRecord(ids[edge], name, 0.5))
    return tuple(recs)


def _n(config: SynthConfig, default: int, minimum: int) -> int:
    n = config.n_cbgs or default
    if n < minimum:
        raise InputError(f"preset {config.preset} needs n_cbgs >= {minimum}")
    return n


def _mix(config: SynthConfig, default: dict[str, float]) -> dict[str, float]:
    return dict(config.archetype_weights) if config.archetype_weights is not None else default


def _layout_stationary(config, rng) -> Layout:
    n = _n(config, 8, 1)
    ids = _ids(n)
    pop = _pops(rng, n, *config.population_range)
    return Layout(ids, pop, [Zone(np.arange(n), _mix(config, {"resident": 1.0}), {})])


def _layout_commuter_region(config, rng, default_mix) -> Layout:
    n = _n(config, 12, 4)
    ids = _ids(n)
    n_jobs = max(2, n // 4)
    lo, hi = config.population_range
    pop = np.concatenate([_pops(rng, n_jobs, lo // 5, hi // 5), _pops(rng, n - n_jobs, lo, hi)])
    jobs = np.arange(n_jobs)
    homes = np.arange(n)
    pools = {
        "work": _merge(_pool(jobs, 4.0), _pool(homes[n_jobs:], 0.5)),
        "attraction": _pool(jobs[:2]),
        "shop": _pool(homes),
    }
    members = np.arange(n_jobs, min(n, n_jobs + 4))
    cw = _crosswalk(ids, "region_town", members, rng)
    return Layout(ids, pop, [Zone(homes, _mix(config, default_mix), pools)], cw)


def _layout_separable(config, rng) -> Layout:
    return _layout_commuter_region(config, rng, {"resident": 0.5, "commuter": 0.5})


def _layout_mixed(config, rng) -> Layout:
    mix = {"resident": 0.4, "commuter": 0.45, "night_worker": 0.1, "tourist": 0.05}
    return _layout_commuter_region(config, rng, mix)


def _layout_metro(config, rng) -> Layout:
    n = _n(config, 200, 10)
    ids = _ids(n)
    lo, hi = config.population_range
    role = rng.random(n)
    jobs = np.flatnonzero(role < 0.10)
    attractions = np.flatnonzero((role >= 0.10) & (role < 0.13))
    # every home needs a destination other than itself in each pool
    if jobs.size < 2:
        jobs = np.union1d(jobs, [0, 1])
    if attractions.size < 2:
        attractions = np.union1d(attractions, [n - 2, n - 1])
    pop = _pops(rng, n, lo, hi)
    pop[jobs] = _pops(rng, jobs.size, lo // 5, hi // 5)
    job_weight = rng.gamma(2.0, 1.0, size=jobs.size)
    pools = {
        "work": _pool(jobs, job_weight),
        "attraction": _pool(attractions),
        "shop": _pool(np.arange(n)),
    }
    mix = _mix(config, {"resident": 0.45, "commuter": 0.4, "night_worker": 0.05, "tourist": 0.05, "shopper": 0.05})
    records = []
    size = 20
    for start in range(0, n - n % size, size):
        name = f"place_{start // size:03d}"
        members = np.arange(start, start + size)
        fracs = rng.uniform(0.3, 1.0, size=size)
        records.extend(CrosswalkRecord(ids[m], name, float(np.round(f, 3))) for m, f in zip(members, fracs))
    return Layout(ids, pop, [Zone(np.arange(n), mix, pools)], tuple(records))


def _layout_bedroom(config, rng) -> Layout:
    n = _n(config, 40, 20)
    ids = _ids(n)
    lo, hi = config.population_range
    town = np.arange(0, 10)
    cbd = np.arange(10, 15)
    region = np.arange(15, n)
    pop = np.concatenate([_pops(rng, 10, lo, hi), _pops(rng, 5, lo // 5, hi // 4), _pops(rng, n - 15, lo, hi)])
    outside = _merge(_pool(cbd, 5.0), _pool(region, 1.0))
    zones = [
        Zone(town, {"resident": 0.35, "commuter": 0.6, "night_worker": 0.05}, {"work": outside}),
        Zone(
            np.concatenate([cbd, region]),
            {"resident": 0.5, "commuter": 0.45, "shopper": 0.05},
            {"work": _merge(outside, _pool(town, 0.2)), "shop": _pool(np.arange(n))},
        ),
    ]
    cw = _crosswalk(ids, "bedroom_town", town, rng, edge=int(region[0]))
    return Layout(ids, pop, zones, cw, meta={"place": "bedroom_town"})


def _layout_industrial(config, rng) -> Layout:
    n = _n(config, 40, 16)
    ids = _ids(n)
    lo, hi = config.population_range
    works = np.arange(0, 6)
    region = np.arange(6, n)
    pop = np.concatenate([_pops(rng, 6, lo // 8, hi // 5), _pops(rng, n - 6, lo, hi)])
    zones = [
        Zone(works, {"resident": 0.6, "commuter": 0.4}, {"work": _pool(region)}),
        Zone(
            region,
            {"resident": 0.45, "commuter": 0.45, "night_worker": 0.1},
            {"work": _merge(_pool(works, 6.0 * region.size / works.size / 4), _pool(region, 1.0))},
        ),
    ]
    cw = _crosswalk(ids, "industrial_city", works, rng, edge=int(region[0]))
    return Layout(ids, pop, zones, cw, meta={"place": "industrial_city"})


def _layout_university(config, rng) -> Layout:
    n = _n(config, 30, 16)
    ids = _ids(n)
    lo, hi = config.population_range
    campus = np.array([0])
    dorms = np.arange(1, 5)
    town = np.arange(5, 10)
    region = np.arange(10, n)
    pop = np.concatenate([[50.0], _pops(rng, 4, 1500, 2500), _pops(rng, 5, lo, hi), _pops(rng, n - 10, lo, hi)])
    zones = [
        Zone(dorms, {"student": 0.85, "resident": 0.15}, {"campus": _pool(campus), "family": _pool(region)}),
        Zone(
            np.concatenate([campus, town]),
            {"resident": 0.5, "commuter": 0.5},
            {"work": _merge(_pool(campus, 2.0), _pool(region))},
        ),
        Zone(
            region,
            {"resident": 0.45, "commuter": 0.4, "campus_commuter": 0.15},
            {"work": _merge(_pool(campus, 2.0), _pool(region), _pool(town, 0.5)), "campus": _pool(campus)},
        ),
    ]
    members = np.concatenate([campus, dorms, town])
    cw = _crosswalk(ids, "college_town", members, rng)
    return Layout(
        ids,
        pop,
        zones,
        cw,
        meta={"place": "college_town", "semester_days": [7, 14], "break_days": [21, 28]},
    )


def _layout_festival(config, rng) -> Layout:
    n = _n(config, 40, 12)
    ids = _ids(n)
    lo, hi = config.population_range
    venue = np.array([0])
    town = np.arange(1, 5)
    region = np.arange(5, n)
    pop = np.concatenate([[50.0], _pops(rng, 4, 150, 300), _pops(rng, n - 5, lo, hi)])
    zones = [
        Zone(np.concatenate([venue, town]), {"resident": 0.7, "commuter": 0.3}, {"work": _pool(region)}),
        Zone(
            region,
            {"resident": 0.4, "commuter": 0.45, "festival_visitor": 0.15},
            {"work": _pool(region), "venue": _pool(venue)},
        ),
    ]
    cw = _crosswalk(ids, "festival_town", np.concatenate([venue, town]), rng)
    return Layout(ids, pop, zones, cw, meta={"place": "festival_town", "venue": ids[0]})


def _layout_beach(config, rng) -> Layout:
    n = _n(config, 40, 8)
    ids = _ids(n)
    lo, hi = config.population_range
    beach = np.arange(0, 3)
    region = np.arange(3, n)
    pop = np.concatenate([_pops(rng, 3, 200, 400), _pops(rng, n - 3, lo, hi)])
    zones = [
        Zone(beach, {"resident": 0.8, "commuter": 0.2}, {"work": _pool(region)}),
        Zone(
            region,
            {"resident": 0.45, "commuter": 0.4, "tourist": 0.15},
            {"work": _pool(region), "attraction": _pool(beach)},
        ),
    ]
    cw = _crosswalk(ids, "beach_town", beach, rng)
    return Layout(ids, pop, zones, cw, seasonal=SEASONAL_TOURISM, meta={"place": "beach_town"})


PRESETS: dict[str, Callable[[SynthConfig, np.random.Generator], Layout]] = {
    "stationary": _layout_stationary,
    "separable": _layout_separable,
    "mixed": _layout_mixed,
    "metro": _layout_metro,
    "bedroom": _layout_bedroom,
    "industrial": _layout_industrial,
    "university": _layout_university,
    "festival": _layout_festival,
    "beach": _layout_beach,
}


# --------------------------------------------------------------------------
# worlds


@dataclass(frozen=True)
class SyntheticWorld:
    """One month of agent cohorts over a fixed universe.

    ``cohort_home``/``cohort_count`` describe the cohorts; legs are stored
    as parallel arrays ``leg_cohort``, ``leg_dest``, ``leg_schedule`` where
    the schedule indexes into ``masks``.
    """

    universe: Universe
    time: TimeIndex
    population: np.ndarray
    rates: np.ndarray
    cohort_home: np.ndarray
    cohort_count: np.ndarray
    cohort_archetype: tuple[str, ...]
    leg_cohort: np.ndarray
    leg_dest: np.ndarray
    leg_schedule: np.ndarray
    masks: tuple[np.ndarray, ...]
    schedule_names: tuple[str, ...]
    crosswalk: tuple[CrosswalkRecord, ...] = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        counts = np.bincount(self.cohort_home, weights=self.cohort_count, minlength=self.universe.n)
        if not np.array_equal(counts, self.population):
            raise InputError("cohort counts do not add up to the resident population")
        # each agent sits in exactly one CBG per hour: legs of a cohort never overlap
        busy = {}
        for leg, c in enumerate(self.leg_cohort):
            m = self.masks[self.leg_schedule[leg]]
            if c in busy:
                if np.any(busy[c] & m):
                    raise InputError(f"cohort {c} has overlapping legs")
                busy[c] = busy[c] | m
            else:
                busy[c] = m

    @property
    def n_agents(self) -> float:
        return float(self.cohort_count.sum())

    def locations(self, cohort: int) -> np.ndarray:
        """Hourly CBG ordinal of every agent in ``cohort``."""
        loc = np.full(self.time.tau, self.cohort_home[cohort], dtype=int)
        for leg in np.flatnonzero(self.leg_cohort == cohort):
            loc[self.masks[self.leg_schedule[leg]]] = self.leg_dest[leg]
        return loc

    def leg_home(self) -> np.ndarray:
        return self.cohort_home[self.leg_cohort]

    def leg_count(self) -> np.ndarray:
        return self.cohort_count[self.leg_cohort]

    def true_flows(self) -> dict[tuple[int, int], np.ndarray]:
        """Sparse visitor cube: ``(origin, destination) -> hourly visitor counts``.

        Self-legs (a trip inside the home CBG) are kept.
        """
        flows: dict[tuple[int, int], np.ndarray] = {}
        for h, d, cnt, s in zip(self.leg_home(), self.leg_dest, self.leg_count(), self.leg_schedule):
            key = (int(h), int(d))
            add = cnt * self.masks[s]
            flows[key] = flows[key] + add if key in flows else add.astype(float)
        return flows

    def _flow_surface(self, side: str, include_self: bool) -> np.ndarray:
        out = np.zeros((self.time.tau, self.universe.n))
        home, dest, cnt = self.leg_home(), self.leg_dest, self.leg_count()
        keep = np.ones(home.size, dtype=bool) if include_self else home != dest
        idx = dest if side == "in" else home
        for s, m in enumerate(self.masks):
            sel = keep & (self.leg_schedule == s)
            if sel.any():
                out += m[:, None] * np.bincount(idx[sel], weights=cnt[sel], minlength=self.universe.n)[None, :]
        return out

    def true_inbound(self, include_self: bool = False) -> HourMatrix:
        return HourMatrix(self.time, self.universe, self._flow_surface("in", include_self))

    def true_outbound(self, include_self: bool = False) -> HourMatrix:
        return HourMatrix(self.time, self.universe, self._flow_surface("out", include_self))


def _split_counts(total: int, weights: np.ndarray) -> np.ndarray:
    """Largest-remainder integer split of ``total`` by ``weights``."""
    if total == 0 or weights.sum() == 0:
        return np.zeros(weights.size, dtype=int)
    raw = total * weights / weights.sum()
    base = np.floor(raw).astype(int)
    short = total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:short]] += 1
    return base


def _cohorts(layout: Layout, config: SynthConfig, rng: np.random.Generator):
    """Static cohort specs: (home, count, archetype, {pool: dest}) per cohort."""
    specs = []
    for zone in layout.zones:
        _check_weights(zone.mix)
        names = [a for a in ARCHETYPES if zone.mix.get(a, 0) > 0]
        w = np.array([zone.mix[a] for a in names])
        for home in zone.homes:
            counts = _split_counts(int(layout.population[home]), w)
            for arch, count in zip(names, counts):
                if count == 0:
                    continue
                pools_needed = [p for p, _ in ITINERARIES[arch]]
                if not pools_needed:
                    specs.append((int(home), int(count), arch, {}))
                    continue
                # the first pool picks the split; later pools draw one destination per cohort
                main = pools_needed[0]
                idx, pw = _valid_pool(zone, main, home, arch)
                n_dest = min(config.destinations_per_group, idx.size)
                prob = pw / pw.sum()
                chosen = rng.choice(idx, size=n_dest, replace=False, p=prob)
                parts = rng.multinomial(count, np.full(n_dest, 1.0 / n_dest))
                if arch == "commuter" and config.local_trip_share > 0:
                    local = int(round(count * config.local_trip_share))
                    parts = _split_counts(count - local, np.ones(n_dest))
                    specs.append((int(home), local, arch, {main: int(home)}))
                for dest, part in zip(chosen, parts):
                    if part == 0:
                        continue
                    legs = {main: int(dest)}
                    for extra in pools_needed[1:]:
                        eidx, ew = _valid_pool(zone, extra, home, arch)
                        legs[extra] = int(rng.choice(eidx, p=ew / ew.sum()))
                    specs.append((int(home), int(part), arch, legs))
    return specs


def _valid_pool(zone: Zone, pool: str, home: int, arch: str):
    if pool not in zone.pools:
        raise InputError(f"archetype {arch} needs a {pool!r} destination pool")
    idx, w = zone.pools[pool]
    keep = idx != home
    if not keep.any():
        raise InputError(f"no {pool!r} destination outside home CBG {home}")
    return idx[keep], w[keep]


def _month_times(config: SynthConfig) -> list[TimeIndex]:
    out = []
    for offset in range(config.months):
        y, m = divmod(config.month - 1 + offset, 12)
        out.append(build_time_index(config.year + y, m + 1, config.days))
    return out


def _rates(config: SynthConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    spread = config.sampling_rate_spread
    rates = config.sampling_rate * (1 + spread * rng.uniform(-1, 1, size=n))
    return np.clip(rates, 1e-6, 1.0)


def generate_worlds(config: SynthConfig) -> list[SyntheticWorld]:
    """One world per configured month; cohorts and universe are shared."""
    rng = np.random.default_rng([config.rng_seed, 0])
    layout = PRESETS[config.preset](config, rng)
    if layout.population.sum() <= 0:
        raise InputError("synthetic world has zero population")
    universe = build_universe(layout.ids)
    rates = _rates(config, universe.n, rng)
    specs = _cohorts(layout, config, rng)
    return [_build_world(layout, universe, rates, specs, time, config) for time in _month_times(config)]


def generate_world(config: SynthConfig) -> SyntheticWorld:
    return generate_worlds(replace(config, months=1))[0]


def _build_world(layout, universe, rates, specs, time, config) -> SyntheticWorld:
    festival_day = config.festival_day if config.festival_day is not None else default_festival_day(time)
    names = sorted({s for legs in ITINERARIES.values() for _, s in legs})
    masks = tuple(
        schedule_mask(s, time, festival_day=festival_day, break_start_day=config.break_start_day) for s in names
    )
    sched_index = {s: i for i, s in enumerate(names)}
    season = layout.seasonal[(time.month - 1) % 12] if layout.seasonal else 1.0

    homes, counts, archs = [], [], []
    leg_c, leg_d, leg_s = [], [], []
    for home, count, arch, legs in specs:
        active = count
        if arch == "tourist" and season < 1.0:
            active = int(round(count * season))
            if count - active:
                homes.append(home)
                counts.append(count - active)
                archs.append("resident")
        if active == 0:
            continue
        cid = len(homes)
        homes.append(home)
        counts.append(active)
        archs.append(arch)
        for pool, sched in ITINERARIES[arch]:
            leg_c.append(cid)
            leg_d.append(legs[pool])
            leg_s.append(sched_index[sched])

    meta = dict(layout.meta)
    meta.update({"preset": config.preset, "festival_day": festival_day, "break_start_day": config.break_start_day})
    return SyntheticWorld(
        universe=universe,
        time=time,
        population=layout.population.copy(),
        rates=rates,
        cohort_home=np.asarray(homes, dtype=int),
        cohort_count=np.asarray(counts, dtype=float),
        cohort_archetype=tuple(archs),
        leg_cohort=np.asarray(leg_c, dtype=int),
        leg_dest=np.asarray(leg_d, dtype=int),
        leg_schedule=np.asarray(leg_s, dtype=int),
        masks=masks,
        schedule_names=tuple(names),
        crosswalk=layout.crosswalk,
        meta=meta,
    )


def true_population(world: SyntheticWorld) -> HourMatrix:
    """Agents present in each CBG at each hour."""
    n = world.universe.n
    cells = np.repeat(world.population[None, :], world.time.tau, axis=0)
    home, dest, cnt = world.leg_home(), world.leg_dest, world.leg_count()
    for s, m in enumerate(world.masks):
        sel = world.leg_schedule == s
        if not sel.any():
            continue
        net = np.bincount(dest[sel], weights=cnt[sel], minlength=n) - np.bincount(home[sel], weights=cnt[sel], minlength=n)
        cells += m[:, None] * net[None, :]
    return HourMatrix(world.time, world.universe, cells)


def reference_from_truth(world: SyntheticWorld) -> ReferenceTable:
    """Weekday-noon mean as daytime, all-days midnight mean as nighttime."""
    cells = true_population(world).cells
    days = world.time.day_weekdays()
    noon = cells[12::24]
    midnight = cells[0::24]
    return ReferenceTable(world.universe, noon[days < 5].mean(axis=0), midnight.mean(axis=0))


# --------------------------------------------------------------------------
# observation


@dataclass(frozen=True)
class ObservationBundle:
    universe: Universe
    time: TimeIndex
    patterns: PatternsTable
    panel: PanelTable
    population: PopulationTable
    reference: ReferenceTable
    crosswalk: tuple[CrosswalkRecord, ...] = ()


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cum = np.cumsum(w)
    return float(v[np.searchsorted(cum, 0.5 * cum[-1])])


def observe(world: SyntheticWorld, config: SynthConfig) -> ObservationBundle:
    n, tau = world.universe.n, world.time.tau
    if config.observation_mode == "expected":
        enrolled = world.cohort_count * world.rates[world.cohort_home]
    else:
        rng = np.random.default_rng([config.rng_seed, 1, world.time.year, world.time.month])
        enrolled = rng.binomial(world.cohort_count.astype(np.int64), world.rates[world.cohort_home]).astype(float)
    panel = np.bincount(world.cohort_home, weights=enrolled, minlength=n)

    home, dest = world.leg_home(), world.leg_dest
    e_leg = enrolled[world.leg_cohort]
    stop_masks = [m if config.stop_mode == "presence" else arrivals(m) for m in world.masks]
    stops = np.zeros((tau, n))
    origin_val = np.zeros(home.size)
    for s, m in enumerate(stop_masks):
        sel = world.leg_schedule == s
        if not sel.any():
            continue
        stops += m[:, None] * np.bincount(dest[sel], weights=e_leg[sel], minlength=n)[None, :]
        origin_val[sel] = e_leg[sel] * (m.sum() if config.origin_count == "stops" else 1.0)
    if config.origin_count == "devices":
        # a device counts once per destination however many legs lead there
        pair = world.leg_cohort.astype(np.int64) * n + dest
        _, first = np.unique(pair, return_index=True)
        keep = np.zeros(home.size, dtype=bool)
        keep[first] = True
        origin_val = np.where(keep, origin_val, 0.0)
    origins = sp.coo_matrix((origin_val, (dest, home)), shape=(n, n)).tocsr()
    origins.sum_duplicates()
    totals = np.asarray(origins.sum(axis=1)).ravel()
    if config.truncate_below > 0:
        origins.data[origins.data < config.truncate_below] = 0.0
    origins.eliminate_zeros()

    dwell = np.zeros(n)
    has_stops = stops.sum(axis=0) > 0
    if config.stop_mode == "presence":
        dwell[has_stops] = config.presence_dwell_minutes
    else:
        runs = [run_lengths(m) for m in world.masks]
        vals, wts, dsts = [], [], []
        for leg in range(home.size):
            r = runs[world.leg_schedule[leg]]
            if r.size and e_leg[leg] > 0:
                vals.append(r)
                wts.append(np.full(r.size, e_leg[leg]))
                dsts.append(np.full(r.size, dest[leg]))
        if vals:
            vals, wts, dsts = np.concatenate(vals), np.concatenate(wts), np.concatenate(dsts)
            for c in np.unique(dsts):
                sel = dsts == c
                dwell[c] = 60.0 * _weighted_median(vals[sel].astype(float), wts[sel])

    patterns = patterns_from_arrays(world.universe, world.time, stops, dwell, origins, totals)
    return ObservationBundle(
        world.universe,
        world.time,
        patterns,
        PanelTable(world.universe, panel),
        PopulationTable(world.universe, world.population),
        reference_from_truth(world),
        world.crosswalk,
    )


def write_bundle(bundle: ObservationBundle, world: SyntheticWorld, directory) -> Path:
    """Write the ingest CSVs plus ``truth.csv`` and ``world.json`` into ``directory``."""
    if not bundle.time.is_full_month:
        raise InputError("partial months cannot be written as bundles")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_patterns(directory / "patterns.csv", bundle.patterns)
    write_panel(directory / "panel.csv", bundle.panel)
    write_population(directory / "population.csv", bundle.population)
    write_reference(directory / "reference.csv", bundle.reference)
    if bundle.crosswalk:
        write_crosswalk(directory / "crosswalk.csv", bundle.crosswalk)
    write_surface(directory / "truth.csv", true_population(world))
    meta = {k: v for k, v in world.meta.items()}
    meta.update({"month": world.time.label, "agents": world.n_agents, "cohorts": int(world.cohort_home.size)})
    (directory / "world.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def synthesize(config: SynthConfig, out_dir) -> list[Path]:
    """Generate, observe and write every month; one sub-directory per month
    when ``months > 1``, otherwise the bundle lands in ``out_dir`` itself."""
    if config.days is not None:
        raise InputError("partial months cannot be written as bundles; leave days unset")
    out_dir = Path(out_dir)
    worlds = generate_worlds(config)
    paths = []
    for world in worlds:
        target = out_dir / f"month_{world.time.label}" if len(worlds) > 1 else out_dir
        paths.append(write_bundle(observe(world, config), world, target))
    return paths


def place_members(crosswalk, place: str, universe: Universe) -> np.ndarray:
    return np.array([universe.index[r.cbg] for r in crosswalk if r.place == place and r.area_fraction > 0.5], dtype=int)


def preset_names() -> list[str]:
    return sorted(PRESETS)

