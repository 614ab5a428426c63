"""Hourly CBG population from stops and monthly origin maps.

Pipeline: dwell expansion of raw stops, inbound from stops scaled by the
visitor weight of each destination, outbound by fitting an hour x origin
matrix to the hourly inbound totals and the monthly outbound of each
origin, population balance, then the floor/rebalance post-process.

The hour x destination x origin visitor cube is never built; every stage
works on ``tau x n`` dense surfaces plus the sparse origin map.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .ingest import Dataset, PanelTable, PatternsTable
from .ipf import DEFAULT_MAX_ITER, DEFAULT_TOL, IpfReport, harmonize_targets, ipf_fit
from .model import HourMatrix, InputError, NumericalError, PopulationTable

log = logging.getLogger(__name__)

FALLBACK_POLICIES = ("median",)


@dataclass(frozen=True)
class EstimatorConfig:
    k: float = 4.0
    floor_frac: float = 0.10
    rebalance_iterations: int = 1
    ipf_tol: float = DEFAULT_TOL
    ipf_max_iter: int = DEFAULT_MAX_ITER
    include_self_flows: bool = True
    zero_panel_fallback: str = "median"

    def __post_init__(self):
        if not (math.isfinite(self.k) and self.k > 0):
            raise InputError(f"k must be > 0, got {self.k}")
        if not 0 <= self.floor_frac < 1:
            raise InputError(f"floor_frac must be in [0, 1), got {self.floor_frac}")
        if self.rebalance_iterations < 0:
            raise InputError("rebalance_iterations must be >= 0")
        if not self.ipf_tol > 0 or self.ipf_max_iter < 1:
            raise InputError("ipf_tol must be > 0 and ipf_max_iter >= 1")
        if self.zero_panel_fallback not in FALLBACK_POLICIES:
            raise InputError(f"unknown zero_panel_fallback {self.zero_panel_fallback!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown estimator settings: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class PeoplePerDevice:
    values: np.ndarray
    fallback: np.ndarray
    fallback_value: float | None


@dataclass(frozen=True)
class VisitorWeights:
    """Expected people per observed stop at each destination, before ``k``."""

    values: np.ndarray


@dataclass(frozen=True)
class FlowSurfaces:
    inbound: HourMatrix
    outbound: HourMatrix
    monthly_outbound: np.ndarray
    hourly_inbound_totals: np.ndarray
    column_targets: np.ndarray
    ipf_report: IpfReport


@dataclass(frozen=True)
class PopulationSurface:
    population: HourMatrix
    inbound: HourMatrix
    outbound: HourMatrix
    clamped_cells: int = 0
    clamp_residual: np.ndarray | None = None
    pass_residuals: tuple[float, ...] = ()
    subfloor_cells_per_pass: tuple[int, ...] = ()
    unplaced_reduction: float = 0.0

    @property
    def negative_cells(self) -> int:
        return int((self.population.cells < 0).sum())


@dataclass(frozen=True)
class PipelineResult:
    surface: PopulationSurface
    assembled: PopulationSurface
    flows: FlowSurfaces
    weights: VisitorWeights
    people_per_device: PeoplePerDevice
    stops: HourMatrix
    diagnostics: dict = field(repr=False)

    @property
    def population(self) -> HourMatrix:
        return self.surface.population


# --------------------------------------------------------------------------
# inbound


def dwell_extra_hours(dwell_minutes) -> np.ndarray:
    """Extra stop hours per destination: ``ceil(d) - 1`` for dwell ``d`` > 1 h."""
    hours = np.asarray(dwell_minutes, dtype=float) / 60.0
    extra = np.where(hours > 1.0, np.ceil(hours) - 1, 0)
    return extra.astype(int)


def expand_stops(patterns: PatternsTable) -> HourMatrix:
    """Repeat each raw stop over the following hours implied by the median dwell.

    Stops that would land past the end of the month are dropped.
    """
    raw = patterns.stops
    out = raw.copy()
    extra = dwell_extra_hours(patterns.dwell_minutes)
    for e in np.unique(extra[extra > 0]):
        cols = np.flatnonzero(extra == e)
        block = raw[:, cols]
        for shift in range(1, min(int(e), raw.shape[0] - 1) + 1):
            out[shift:, cols] += block[:-shift]
    return HourMatrix(patterns.time, patterns.universe, out)


def people_per_device(panel: PanelTable, population: PopulationTable, fallback_policy: str = "median") -> PeoplePerDevice:
    """Residents per tracked device, ``N / D``.

    CBGs with residents but no panel devices take the median of the defined
    values. CBGs without residents get 0.
    """
    if fallback_policy not in FALLBACK_POLICIES:
        raise InputError(f"unknown fallback policy {fallback_policy!r}")
    n_res = population.values
    dev = panel.devices
    defined = (dev > 0) & (n_res > 0)
    values = np.zeros_like(n_res)
    np.divide(n_res, dev, out=values, where=dev > 0)
    fallback = (dev <= 0) & (n_res > 0)
    fallback_value = None
    if fallback.any():
        if not defined.any():
            raise InputError("every populated CBG has zero panel devices; fallback P undefined")
        fallback_value = float(np.median(values[defined]))
        values[fallback] = fallback_value
    return PeoplePerDevice(values, fallback, fallback_value)


def visitor_weights(patterns: PatternsTable, ppd) -> VisitorWeights:
    """Sum over origins of the monthly origin ratio times people-per-device."""
    p = getattr(ppd, "values", ppd)
    weighted = patterns.origins @ np.asarray(p, dtype=float)
    totals = patterns.totals
    w = np.zeros_like(weighted)
    np.divide(weighted, totals, out=w, where=totals > 0)
    return VisitorWeights(w)


def estimate_inbound(stops: HourMatrix, weights: VisitorWeights, k: float) -> HourMatrix:
    if not k > 0:
        raise InputError(f"k must be > 0, got {k}")
    return stops.replace(stops.cells * (k * weights.values)[None, :])


# --------------------------------------------------------------------------
# outbound


def monthly_outbound(patterns: PatternsTable, ppd, k: float, include_self_flows: bool = True) -> np.ndarray:
    """Monthly people leaving each origin: ``k * P_j * sum_c d_{j->c}``."""
    origins = patterns.origins
    devices = np.asarray(origins.sum(axis=0)).ravel()
    if not include_self_flows:
        devices = devices - origins.diagonal()
    p = np.asarray(getattr(ppd, "values", ppd), dtype=float)
    return k * p * devices


def estimate_outbound(
    inbound: HourMatrix,
    monthly: np.ndarray,
    config: EstimatorConfig = EstimatorConfig(),
    seed: np.ndarray | None = None,
) -> FlowSurfaces:
    """Fit hourly outbound per origin to the hourly inbound totals.

    Row targets are the hourly inbound totals over destinations; column
    targets are the monthly outbound rescaled to the same grand total.
    With the default all-ones seed the fit is the independence table.
    """
    rows = inbound.hourly_totals()
    monthly = np.asarray(monthly, dtype=float)
    shape = inbound.shape
    if rows.sum() <= 0:
        report = IpfReport(0, 0.0, 0.0, True, config.ipf_tol)
        return FlowSurfaces(inbound, inbound.replace(np.zeros(shape)), monthly, rows, np.zeros_like(monthly), report)
    if monthly.sum() <= 0:
        raise NumericalError("inbound is positive but no origin has monthly outbound")
    cols = harmonize_targets(rows, monthly)
    if seed is None:
        seed = np.ones(shape)
    fitted, report = ipf_fit(seed, rows, cols, tol=config.ipf_tol, max_iter=config.ipf_max_iter)
    if not report.converged:
        log.warning(
            "outbound fit stopped after %d iterations (row residual %.3g, column residual %.3g)",
            report.iterations,
            report.max_row_residual,
            report.max_col_residual,
        )
    return FlowSurfaces(inbound, inbound.replace(fitted), monthly, rows, cols, report)


# --------------------------------------------------------------------------
# balance and floor


def assemble(population: PopulationTable, inbound: HourMatrix, outbound: HourMatrix) -> PopulationSurface:
    """Cellwise ``N - Out + In``; negative cells are kept."""
    cells = population.values[None, :] - outbound.cells + inbound.cells
    return PopulationSurface(inbound.replace(cells), inbound, outbound)


def destination_shares(patterns: PatternsTable) -> sp.csr_matrix:
    """Row-normalised origin -> destination device shares, self-destination excluded."""
    flows = patterns.origins.T.tocsr().astype(float)
    flows.setdiag(0)
    flows.eliminate_zeros()
    sums = np.asarray(flows.sum(axis=1)).ravel()
    inv = np.zeros_like(sums)
    np.divide(1.0, sums, out=inv, where=sums > 0)
    return sp.diags(inv) @ flows


def _fill(request: np.ndarray, capacity: np.ndarray, eligible: np.ndarray) -> np.ndarray:
    """Place per-hour ``request`` amounts into ``capacity`` proportionally, per row."""
    cap = np.where(eligible, capacity, 0.0)
    total = cap.sum(axis=1)
    take = np.minimum(request, total)
    frac = np.zeros_like(total)
    np.divide(take, total, out=frac, where=total > 0)
    return cap * frac[:, None]


def _reduce_inbound(deficit: np.ndarray, inbound: np.ndarray, shares: sp.csr_matrix) -> tuple[np.ndarray, float]:
    """Per-destination inbound reductions summing to the deficit of every hour."""
    # origins without recorded destinations contribute nothing here and
    # fall through to the overflow spreading below
    cut = np.minimum(np.asarray((shares.T @ deficit.T).T), inbound)
    overflow = np.maximum(deficit.sum(axis=1) - cut.sum(axis=1), 0.0)
    if np.any(overflow > 0):
        slack = inbound - cut
        # first spread over destinations that are not short themselves
        extra = _fill(overflow, slack, deficit <= 0)
        cut = cut + extra
        overflow = overflow - extra.sum(axis=1)
        if np.any(overflow > 1e-12 * max(1.0, float(deficit.sum()))):
            extra = _fill(overflow, inbound - cut, np.ones_like(cut, dtype=bool))
            cut = cut + extra
            overflow = overflow - extra.sum(axis=1)
    return cut, float(np.maximum(overflow, 0).sum())


def rebalance_floor(
    surface: PopulationSurface,
    population: PopulationTable,
    inbound: HourMatrix,
    outbound: HourMatrix,
    patterns: PatternsTable,
    config: EstimatorConfig = EstimatorConfig(),
) -> PopulationSurface:
    """Raise sub-floor cells to ``floor_frac * N`` while keeping hourly totals.

    Each pass lowers the short CBG's outbound by its deficit and lowers the
    inbound of the destinations its residents visit by the same total, split
    by the origin's monthly destination shares. Cells still short after the
    last pass are clamped; the mass this adds is reported per hour.
    """
    n_res = population.values
    floor = config.floor_frac * n_res
    active = n_res > 0
    inn = inbound.cells.copy()
    out = outbound.cells.copy()
    shares = destination_shares(patterns)
    pass_residuals: list[float] = []
    subfloor: list[int] = []
    unplaced = 0.0
    scale = max(1.0, float(n_res.sum()))

    for _ in range(config.rebalance_iterations):
        p = n_res[None, :] - out + inn
        short = active[None, :] & (p < floor[None, :])
        subfloor.append(int(short.sum()))
        if not short.any():
            break
        deficit = np.where(short, floor[None, :] - p, 0.0)
        cut, left = _reduce_inbound(deficit, inn, shares)
        unplaced += left
        out -= deficit
        inn -= cut
        np.maximum(inn, 0.0, out=inn)
        after = n_res[None, :] - out + inn
        pass_residuals.append(float(np.max(np.abs(after.sum(axis=1) - p.sum(axis=1))) / scale))

    p = n_res[None, :] - out + inn
    short = active[None, :] & (p < floor[None, :])
    subfloor.append(int(short.sum()))
    before = p.sum(axis=1)
    p = np.where(short, floor[None, :], p)
    residual = p.sum(axis=1) - before
    return PopulationSurface(
        population=surface.population.replace(p),
        inbound=inbound.replace(inn),
        outbound=outbound.replace(out),
        clamped_cells=int(short.sum()),
        clamp_residual=residual,
        pass_residuals=tuple(pass_residuals),
        subfloor_cells_per_pass=tuple(subfloor),
        unplaced_reduction=unplaced,
    )


# --------------------------------------------------------------------------
# pipeline


def _cbg_fraction(mask: np.ndarray) -> float:
    return float(mask.any(axis=0).mean()) if mask.size else 0.0


def run_pipeline(dataset: Dataset, config: EstimatorConfig = EstimatorConfig(), seed: np.ndarray | None = None) -> PipelineResult:
    """Run every stage for one month of data. Deterministic."""
    stops = expand_stops(dataset.patterns)
    ppd = people_per_device(dataset.panel, dataset.population, config.zero_panel_fallback)
    weights = visitor_weights(dataset.patterns, ppd)
    inbound = estimate_inbound(stops, weights, config.k)
    monthly = monthly_outbound(dataset.patterns, ppd, config.k, config.include_self_flows)
    flows = estimate_outbound(inbound, monthly, config, seed)
    assembled = assemble(dataset.population, flows.inbound, flows.outbound)
    surface = rebalance_floor(assembled, dataset.population, flows.inbound, flows.outbound, dataset.patterns, config)

    n_res = dataset.population.values
    pre = assembled.population.cells
    total = float(n_res.sum())
    conservation = np.abs(pre.sum(axis=1) - total) / max(1.0, total)
    below_floor = (n_res[None, :] > 0) & (pre < config.floor_frac * n_res[None, :])
    diagnostics = {
        "month": dataset.time.label,
        "n_cbgs": dataset.universe.n,
        "hours": dataset.time.tau,
        "config": config.to_dict(),
        "ipf": flows.ipf_report.to_dict(),
        "people_per_device": {
            "fallback_cbgs": int(ppd.fallback.sum()),
            "fallback_value": ppd.fallback_value,
        },
        "inbound_total": float(flows.inbound.cells.sum()),
        "monthly_outbound_total": float(monthly.sum()),
        "column_target_scale": float(flows.column_targets.sum() / monthly.sum()) if monthly.sum() > 0 else None,
        "pre_rebalance": {
            "negative_cells": int((pre < 0).sum()),
            "negative_cbg_fraction": _cbg_fraction(pre < 0),
            "subfloor_cells": int(below_floor.sum()),
            "subfloor_cbg_fraction": _cbg_fraction(below_floor),
            "max_hourly_conservation_error": float(conservation.max()) if conservation.size else 0.0,
        },
        "rebalance": {
            "passes_run": len(surface.pass_residuals),
            "pass_residuals": list(surface.pass_residuals),
            "subfloor_cells_per_pass": list(surface.subfloor_cells_per_pass),
            "unplaced_reduction": surface.unplaced_reduction,
            "clamped_cells": surface.clamped_cells,
            "clamp_residual_total": float(surface.clamp_residual.sum()),
            "clamp_residual_per_hour": [float(x) for x in surface.clamp_residual],
        },
    }
    return PipelineResult(surface, assembled, flows, weights, ppd, stops, diagnostics)
