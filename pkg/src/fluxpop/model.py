"""Shared vocabulary: CBG universes, month time indexing, population tables
and the hour-by-CBG matrix used for stops, flows and population surfaces."""

from __future__ import annotations

import calendar
import datetime as _dt
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

WEEKDAY_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")


class FluxpopError(Exception):
    """Base class for all errors raised by this package."""


class InputError(FluxpopError, ValueError):
    """Malformed, missing or inconsistent input data."""


class NumericalError(FluxpopError):
    """A numerical stage could not produce a valid result."""


@dataclass(frozen=True)
class Universe:
    """Ordered set of CBG identifiers with an id -> ordinal index."""

    ids: tuple[str, ...]
    index: dict[str, int] = field(repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, cbg: object) -> bool:
        return cbg in self.index

    def ordinal(self, cbg: str) -> int:
        try:
            return self.index[cbg]
        except KeyError:
            raise InputError(f"unknown CBG id {cbg!r}") from None


def build_universe(ids: Iterable[str]) -> Universe:
    ids = tuple(str(i) for i in ids)
    if not ids:
        raise InputError("empty universe")
    index: dict[str, int] = {}
    for pos, cbg in enumerate(ids):
        if not cbg:
            raise InputError(f"empty CBG id at position {pos}")
        if cbg in index:
            raise InputError(f"duplicate id {cbg}")
        index[cbg] = pos
    return Universe(ids, index)


@dataclass(frozen=True)
class TimeIndex:
    """One calendar month of hours; ``first_weekday`` uses Monday == 0."""

    year: int
    month: int
    first_weekday: int
    days: int

    @property
    def tau(self) -> int:
        return 24 * self.days

    @property
    def is_full_month(self) -> bool:
        return self.days == calendar.monthrange(self.year, self.month)[1]

    @property
    def label(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"

    def weekday_of(self, day: int) -> int:
        return (self.first_weekday + day) % 7

    def day_weekdays(self) -> np.ndarray:
        """Day-of-week (Monday == 0) for every day of the month."""
        return (self.first_weekday + np.arange(self.days)) % 7

    def hour_of_day(self) -> np.ndarray:
        return np.arange(self.tau) % 24

    def is_weekday_hour(self) -> np.ndarray:
        return np.repeat(self.day_weekdays() < 5, 24)

    def timestamp(self, t: int) -> str:
        day, hour, _ = hour_meta(self, t)
        return f"{self.label}-{day + 1:02d}T{hour:02d}:00"


def build_time_index(year: int, month: int, days: int | None = None) -> TimeIndex:
    """Hours of a calendar month.

    ``days`` keeps only the leading days of the month; such partial months
    serve small in-memory instances and cannot be written as patterns files.
    """
    if not 1 <= int(month) <= 12:
        raise InputError(f"month must be in 1..12, got {month}")
    first_weekday, length = calendar.monthrange(int(year), int(month))
    if days is not None and not 1 <= int(days) <= length:
        raise InputError(f"days must be in 1..{length}, got {days}")
    return TimeIndex(int(year), int(month), first_weekday, length if days is None else int(days))


def parse_month(label: str) -> TimeIndex:
    """Parse a ``YYYY-MM`` label."""
    try:
        stamp = _dt.datetime.strptime(label.strip(), "%Y-%m")
    except ValueError:
        raise InputError(f"bad month label {label!r}, expected YYYY-MM") from None
    return build_time_index(stamp.year, stamp.month)


def hour_meta(time: TimeIndex, t: int) -> tuple[int, int, bool]:
    """Return ``(day, hour_of_day, is_weekday)`` for month-relative hour ``t``."""
    if not 0 <= t < time.tau:
        raise IndexError(f"hour {t} outside [0, {time.tau})")
    day, hour = divmod(int(t), 24)
    return day, hour, time.weekday_of(day) < 5


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PopulationTable:
    """Static resident population per CBG, aligned to a universe."""

    universe: Universe
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (self.universe.n,):
            raise InputError(f"population has shape {values.shape}, expected ({self.universe.n},)")
        if not np.all(np.isfinite(values)):
            raise InputError("population contains non-finite values")
        if np.any(values < 0):
            bad = self.universe.ids[int(np.argmax(values < 0))]
            raise InputError(f"negative population for {bad}")
        object.__setattr__(self, "values", values)

    @property
    def total(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True)
class HourMatrix:
    """A ``tau x n`` surface over one month and one universe.

    The cells are stored dense and read-only. Population surfaces may hold
    negative cells between assembly and the floor/rebalance step; flow and
    stop surfaces are checked with :meth:`require_nonnegative`.
    """

    time: TimeIndex
    universe: Universe
    cells: np.ndarray

    def __post_init__(self):
        cells = _frozen(self.cells)
        expected = (self.time.tau, self.universe.n)
        if cells.shape != expected:
            raise InputError(f"hour matrix has shape {cells.shape}, expected {expected}")
        if not np.all(np.isfinite(cells)):
            raise NumericalError("hour matrix contains non-finite cells")
        object.__setattr__(self, "cells", cells)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def require_nonnegative(self, role: str = "matrix") -> "HourMatrix":
        if self.cells.size and self.cells.min() < 0:
            t, c = np.unravel_index(int(np.argmin(self.cells)), self.cells.shape)
            raise NumericalError(f"{role} is negative at hour {t}, CBG {self.universe.ids[c]}")
        return self

    def column(self, cbg: str) -> np.ndarray:
        return self.cells[:, self.universe.ordinal(cbg)]

    def hourly_totals(self) -> np.ndarray:
        return self.cells.sum(axis=1)

    def replace(self, cells: np.ndarray) -> "HourMatrix":
        return HourMatrix(self.time, self.universe, cells)


def zeros(time: TimeIndex, universe: Universe) -> HourMatrix:
    return HourMatrix(time, universe, np.zeros((time.tau, universe.n)))


def align(values: Sequence[float] | np.ndarray, universe: Universe, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != (universe.n,):
        raise InputError(f"{name} has shape {arr.shape}, expected ({universe.n},)")
    return arr
