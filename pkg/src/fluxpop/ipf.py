"""Two-dimensional iterative proportional fitting (RAS balancing)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import NumericalError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 1000


class IpfInfeasibleError(NumericalError):
    """A positive target has no positive seed cell to carry it."""


@dataclass(frozen=True)
class IpfReport:
    iterations: int
    max_row_residual: float
    max_col_residual: float
    converged: bool
    tol: float
    # L1 column residual measured after each row pass
    history: tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "max_row_residual": self.max_row_residual,
            "max_col_residual": self.max_col_residual,
            "converged": self.converged,
            "tol": self.tol,
        }


def harmonize_targets(row_targets, col_targets) -> np.ndarray:
    """Rescale column targets so their grand total equals the row total."""
    rows = np.asarray(row_targets, dtype=float)
    cols = np.asarray(col_targets, dtype=float)
    if np.any(rows < 0) or np.any(cols < 0):
        raise ValueError("targets must be non-negative")
    row_total, col_total = rows.sum(), cols.sum()
    if not row_total > 0 or not col_total > 0:
        raise ValueError("zero total")
    return cols * (row_total / col_total)


def _relative_residual(actual: np.ndarray, target: np.ndarray) -> float:
    if actual.size == 0:
        return 0.0
    return float(np.max(np.abs(actual - target) / np.maximum(1.0, target)))


def _scale_factors(current: np.ndarray, target: np.ndarray) -> np.ndarray:
    out = np.zeros_like(target)
    np.divide(target, current, out=out, where=current > 0)
    return out


def ipf_fit(
    seed,
    row_targets,
    col_targets,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[np.ndarray, IpfReport]:
    """Fit ``seed`` to the row and column totals by alternating scaling.

    Each iteration scales rows to their targets, then columns. Zero seed
    cells stay zero. The residual is ``|sum - target| / max(1, target)``
    maximised over rows and columns. If ``max_iter`` sweeps pass without
    reaching ``tol`` the last iterate is returned with ``converged=False``.
    """
    x = np.array(seed, dtype=float, copy=True)
    rows = np.asarray(row_targets, dtype=float)
    cols = np.asarray(col_targets, dtype=float)
    if x.ndim != 2 or x.shape != (rows.size, cols.size):
        raise ValueError(f"seed shape {x.shape} does not match targets ({rows.size}, {cols.size})")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("seed must be finite and non-negative")
    if np.any(rows < 0) or np.any(cols < 0):
        raise ValueError("targets must be non-negative")
    row_total, col_total = rows.sum(), cols.sum()
    if abs(row_total - col_total) > 1e-9 * max(1.0, row_total, col_total):
        raise ValueError(f"targets not harmonized: row total {row_total!r} vs column total {col_total!r}")

    support_rows = x.sum(axis=1) > 0
    support_cols = x.sum(axis=0) > 0
    bad = np.flatnonzero((rows > 0) & ~support_rows)
    if bad.size:
        raise IpfInfeasibleError(f"row {int(bad[0])} has a positive target but an all-zero seed")
    bad = np.flatnonzero((cols > 0) & ~support_cols)
    if bad.size:
        raise IpfInfeasibleError(f"column {int(bad[0])} has a positive target but an all-zero seed")

    history: list[float] = []
    row_res = col_res = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        x *= _scale_factors(x.sum(axis=1), rows)[:, None]
        col_sums = x.sum(axis=0)
        history.append(float(np.abs(col_sums - cols).sum()))
        x *= _scale_factors(col_sums, cols)[None, :]
        row_res = _relative_residual(x.sum(axis=1), rows)
        col_res = _relative_residual(x.sum(axis=0), cols)
        if row_res <= tol and col_res <= tol:
            break
    converged = bool(row_res <= tol and col_res <= tol)
    return x, IpfReport(iterations, row_res, col_res, converged, tol, tuple(history))
