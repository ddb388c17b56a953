"""Crash and rebound labeling: two-sided extrema of the price over +-half_window days."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from bubblealarm.market_data import PriceSeries, to_date, to_day


@dataclass(frozen=True)
class EventLabels:
    crashes: frozenset[int]
    rebounds: frozenset[int]
    half_window: int = 100

    def __post_init__(self):
        if self.crashes & self.rebounds:
            raise ValueError("a day cannot be both a crash and a rebound")

    def of_type(self, event_type: str) -> np.ndarray:
        if event_type == "crash":
            return np.array(sorted(self.crashes), dtype=np.int64)
        if event_type == "rebound":
            return np.array(sorted(self.rebounds), dtype=np.int64)
        raise ValueError(f"unknown event type {event_type!r}")


def label_events(series: PriceSeries, half_window: int = 100) -> EventLabels:
    """Label observation days whose price is the max (crash) or min (rebound) of
    the forward-filled calendar prices over [d - half_window, d + half_window].

    Days closer than ``half_window`` to either end of the series are never
    labeled. On ties only the earliest day attaining the extreme is kept.
    """
    if half_window < 1:
        raise ValueError("half_window must be positive")
    if series.last_day - series.first_day <= 2 * half_window:
        raise ValueError(f"series spans {series.last_day - series.first_day} days, need more than {2 * half_window}")

    days, cal = series.calendar()
    width = 2 * half_window + 1
    win = sliding_window_view(cal, width)  # row r covers calendar days r .. r + 2h
    centre = cal[half_window : len(cal) - half_window]
    wmax = win.max(axis=1)
    wmin = win.min(axis=1)
    before = sliding_window_view(cal[:-1], half_window)[: len(centre)]  # days r .. r + h - 1
    earlier_max = before.max(axis=1)
    earlier_min = before.min(axis=1)

    flat = wmax == wmin
    is_crash = (centre == wmax) & (earlier_max < centre) & ~flat
    is_rebound = (centre == wmin) & (earlier_min > centre) & ~flat

    centre_days = days[half_window : len(days) - half_window]
    observed = np.isin(centre_days, series.days)
    crashes = frozenset(int(d) for d in centre_days[is_crash & observed])
    rebounds = frozenset(int(d) for d in centre_days[is_rebound & observed])
    return EventLabels(crashes, rebounds, half_window)


def write_events(path: str | Path, labels: EventLabels) -> None:
    rows = [(d, "crash") for d in labels.crashes] + [(d, "rebound") for d in labels.rebounds]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "type"])
        for d, kind in sorted(rows):
            w.writerow([to_date(d).isoformat(), kind])


def read_events(path: str | Path, half_window: int = 100) -> EventLabels:
    crashes, rebounds = set(), set()
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            kind = row["type"].strip()
            target = {"crash": crashes, "rebound": rebounds}.get(kind)
            if target is None:
                raise ValueError(f"{path}: unknown event type {kind!r}")
            target.add(to_day(row["date"]))
    return EventLabels(frozenset(crashes), frozenset(rebounds), half_window)
