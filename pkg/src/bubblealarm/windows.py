"""Sub-window grid: start times step forward from t10, end times step back from t20."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from bubblealarm.market_data import DateLike, to_date, to_day

log = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class Window:
    # field order gives the (t2, t1) sort
    t2: int
    t1: int

    def __post_init__(self):
        if self.t1 >= self.t2:
            raise ValueError(f"window start {self.t1} must precede end {self.t2}")

    @property
    def width(self) -> int:
        return self.t2 - self.t1

    @property
    def start(self) -> date:
        return to_date(self.t1)

    @property
    def end(self) -> date:
        return to_date(self.t2)


def generate_windows(
    t10: DateLike,
    t20: DateLike,
    dt1: int = 50,
    dt2: int = -50,
    dtmin: int = 110,
    dtmax: int = 1500,
) -> list[Window]:
    """All windows (t10 + k*dt1, t20 + j*dt2) with dtmin <= width <= dtmax.

    Returns an empty list (with a logged warning) when the span is too short
    to hold a single window.
    """
    lo, hi = to_day(t10), to_day(t20)
    if lo >= hi:
        raise ValueError("t10 must precede t20")
    if dt1 <= 0 or dt2 >= 0:
        raise ValueError("dt1 must be positive and dt2 negative")
    if not 0 < dtmin <= dtmax:
        raise ValueError("need 0 < dtmin <= dtmax")

    out = []
    for t2 in range(hi, lo, dt2):
        # t1 = lo + k*dt1 inside [t2 - dtmax, t2 - dtmin]
        k_min = max(0, -(-(t2 - dtmax - lo) // dt1))
        k_max = (t2 - dtmin - lo) // dt1
        for k in range(k_min, k_max + 1):
            out.append(Window(t2=t2, t1=lo + k * dt1))
    out.sort()
    if not out:
        log.warning("empty window grid: span %d days is shorter than dtmin=%d", hi - lo, dtmin)
    return out


def write_windows(path: str | Path, windows: list[Window]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t1", "t2", "width"])
        for win in windows:
            w.writerow([win.start.isoformat(), win.end.isoformat(), win.width])


def read_windows(path: str | Path) -> list[Window]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [Window(t2=to_day(r["t2"]), t1=to_day(r["t1"])) for r in rows]
