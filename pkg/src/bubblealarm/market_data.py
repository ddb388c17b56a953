"""Price and risk-free rate ingestion.

Dates are carried internally as proleptic Gregorian ordinals (``date.toordinal()``)
so that all window, fit and alarm arithmetic happens on a plain integer
calendar-day axis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

DateLike = Union[date, str, int, np.integer]


class DataError(ValueError):
    """Raised for malformed or invalid input data."""


class OutOfRangeError(LookupError):
    """Raised when a series is queried before its first observation."""


def to_day(d: DateLike) -> int:
    """Convert a date, ISO string or ordinal to an integer calendar-day ordinal."""
    if isinstance(d, (int, np.integer)):
        return int(d)
    if isinstance(d, str):
        return date.fromisoformat(d.strip()).toordinal()
    if isinstance(d, date):
        return d.toordinal()
    raise TypeError(f"cannot interpret {d!r} as a date")


def to_date(day: int) -> date:
    return date.fromordinal(int(day))


def _check_axis(days: np.ndarray, values: np.ndarray, what: str) -> None:
    if days.ndim != 1 or days.shape != values.shape:
        raise DataError(f"{what}: dates and values must be 1-d arrays of equal length")
    if len(days) == 0:
        raise DataError(f"{what}: series is empty")
    if np.any(np.diff(days) <= 0):
        dup = np.flatnonzero(np.diff(days) == 0)
        if len(dup):
            raise DataError(f"{what}: duplicate date {to_date(days[dup[0]])}")
        raise DataError(f"{what}: dates must be strictly increasing")
    if not np.all(np.isfinite(values)):
        raise DataError(f"{what}: non-finite value")


@dataclass(frozen=True)
class _DailySeries:
    days: np.ndarray
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        days = np.asarray(self.days, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        days.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.days)

    @property
    def dates(self) -> list[date]:
        return [to_date(d) for d in self.days]

    @property
    def first_day(self) -> int:
        return int(self.days[0])

    @property
    def last_day(self) -> int:
        return int(self.days[-1])

    def value_on(self, d: DateLike) -> float:
        day = to_day(d)
        i = int(np.searchsorted(self.days, day, side="right")) - 1
        if i < 0:
            raise OutOfRangeError(f"{to_date(day)} precedes first observation {to_date(self.days[0])}")
        return float(self.values[i])

    def values_on(self, days: Iterable[int]) -> np.ndarray:
        """Forward-filled values for an array of calendar-day ordinals."""
        days = np.asarray(days, dtype=np.int64)
        idx = np.searchsorted(self.days, days, side="right") - 1
        if np.any(idx < 0):
            raise OutOfRangeError("query precedes first observation")
        return self.values[idx]

    def calendar(self, start: DateLike | None = None, end: DateLike | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Every calendar day in [start, end] with forward-filled values."""
        lo = self.first_day if start is None else to_day(start)
        hi = self.last_day if end is None else to_day(end)
        days = np.arange(lo, hi + 1, dtype=np.int64)
        return days, self.values_on(days)

    def between(self, start: DateLike, end: DateLike) -> tuple[np.ndarray, np.ndarray]:
        """Observations with start <= date <= end."""
        lo = np.searchsorted(self.days, to_day(start), side="left")
        hi = np.searchsorted(self.days, to_day(end), side="right")
        return self.days[lo:hi], self.values[lo:hi]


@dataclass(frozen=True)
class PriceSeries(_DailySeries):
    """Adjusted-close observations on trading days."""

    def __post_init__(self):
        super().__post_init__()
        _check_axis(self.days, self.values, self.name or "prices")
        if np.any(self.values <= 0):
            bad = int(np.flatnonzero(self.values <= 0)[0])
            raise DataError(f"non-positive price {self.values[bad]} on {to_date(self.days[bad])}")

    @property
    def prices(self) -> np.ndarray:
        return self.values

    def price_on(self, d: DateLike) -> float:
        return self.value_on(d)

    def truncate(self, end: DateLike) -> "PriceSeries":
        days, values = self.between(self.first_day, end)
        return PriceSeries(days, values, self.name)


@dataclass(frozen=True)
class RateSeries(_DailySeries):
    """Annualized risk-free rate in decimal units (0.03 == 3%)."""

    def __post_init__(self):
        super().__post_init__()
        _check_axis(self.days, self.values, self.name or "rates")

    @property
    def rates(self) -> np.ndarray:
        return self.values

    def rate_on(self, d: DateLike) -> float:
        return self.value_on(d)

    @classmethod
    def constant(cls, rate: float, start: DateLike, name: str = "constant") -> "RateSeries":
        if not math.isfinite(rate):
            raise DataError("constant rate must be finite")
        return cls(np.array([to_day(start)]), np.array([float(rate)]), name)


def price_on(series: PriceSeries, d: DateLike) -> float:
    return series.price_on(d)


def _read_columns(path: Path, date_col: str, value_col: str, what: str) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    days: list[int] = []
    values: list[float] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        for col in (date_col, value_col):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r} (have {header})")
        di, vi = header.index(date_col), header.index(value_col)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                day = to_day(row[di])
                raw = row[vi].strip()
                value = float(raw)
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: cannot parse row {row!r}: {exc}") from None
            if not math.isfinite(value):
                raise DataError(f"{path}:{lineno}: non-finite {what} {raw!r}")
            days.append(day)
            values.append(value)
    if not days:
        raise DataError(f"{path}: no observations")
    days_arr = np.asarray(days, dtype=np.int64)
    values_arr = np.asarray(values, dtype=float)
    uniq, counts = np.unique(days_arr, return_counts=True)
    if np.any(counts > 1):
        raise DataError(f"{path}: duplicate date {to_date(uniq[counts > 1][0])}")
    order = np.argsort(days_arr, kind="stable")
    return days_arr[order], values_arr[order]


def load_price_series(
    path: str | Path,
    date_col: str = "Date",
    price_col: str = "Adj Close",
    name: str | None = None,
) -> PriceSeries:
    """Load a CSV of dated adjusted closes; rows may come in any order."""
    days, values = _read_columns(Path(path), date_col, price_col, "price")
    if np.any(values <= 0):
        bad = int(np.flatnonzero(values <= 0)[0])
        raise DataError(f"{path}: non-positive price {values[bad]} on {to_date(days[bad])}")
    return PriceSeries(days, values, name or Path(path).stem)


def load_riskfree(path: str | Path, date_col: str = "Date", rate_col: str = "Rate", name: str | None = None) -> RateSeries:
    days, values = _read_columns(Path(path), date_col, rate_col, "rate")
    return RateSeries(days, values, name or Path(path).stem)


def write_series(path: str | Path, series: _DailySeries, date_col: str = "Date", value_col: str = "Adj Close") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([date_col, value_col])
        for d, v in zip(series.days, series.values):
            w.writerow([to_date(d).isoformat(), repr(float(v))])


def day_range(start: DateLike, end: DateLike) -> np.ndarray:
    return np.arange(to_day(start), to_day(end) + 1, dtype=np.int64)


def as_days(dates: Sequence[DateLike]) -> np.ndarray:
    return np.array([to_day(d) for d in dates], dtype=np.int64)
