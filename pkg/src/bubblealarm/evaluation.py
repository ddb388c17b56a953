"""Error diagrams: fraction of missed events against fraction of time under alarm."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from bubblealarm.patrec import AlarmSeries


@dataclass(frozen=True)
class ErrorDiagram:
    points: tuple[tuple[float, float], ...]  # (alarm_fraction, miss_fraction)
    thresholds: tuple[float, ...]
    n_events: int
    n_days: int

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "alarm_fraction", "miss_fraction"])
            for th, (x, y) in zip(self.thresholds, self.points):
                w.writerow([repr(th), repr(x), repr(y)])

    @classmethod
    def from_csv(cls, path: str | Path, n_events: int = 0, n_days: int = 0) -> "ErrorDiagram":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        pts = tuple((float(r["alarm_fraction"]), float(r["miss_fraction"])) for r in rows)
        return cls(pts, tuple(float(r["threshold"]) for r in rows), n_events, n_days)


def _alarm_offsets(Da: int, orientation: str) -> tuple[int, int]:
    if orientation == "forward":
        return 0, Da - 1
    if orientation == "centered":
        half = (Da - 1) // 2
        return -half, Da - 1 - half
    raise ValueError(f"unknown alarm orientation {orientation!r}")


def error_diagram(
    alarm: AlarmSeries | np.ndarray,
    events: Iterable[int],
    Da: int = 41,
    orientation: str = "forward",
    start: int | None = None,
) -> ErrorDiagram:
    """Sweep thresholds down through the distinct alarm values.

    A day whose alarm reaches the threshold opens an alarm period of ``Da``
    days (forward from that day, or centred on it); periods are merged and
    clipped to the alarm range. A point is recorded each time the number of
    events inside some alarm period increases.
    """
    if isinstance(alarm, AlarmSeries):
        values, origin = alarm.values, alarm.start
    else:
        values, origin = np.asarray(alarm, dtype=float), 0 if start is None else start
    n_days = len(values)
    if Da < 1:
        raise ValueError("Da must be at least one day")
    ev = np.array(sorted(set(int(e) for e in events)), dtype=np.int64) - origin
    if len(ev) == 0:
        raise ValueError("error diagram undefined without events")
    if ev.min() < 0 or ev.max() >= n_days:
        raise ValueError("events must fall inside the alarm range")
    lo_off, hi_off = _alarm_offsets(Da, orientation)

    covered = np.zeros(n_days, dtype=bool)
    is_event = np.zeros(n_days, dtype=bool)
    is_event[ev] = True
    n_alarmed = 0
    n_hit = prev_hit = 0
    points, thresholds = [], []
    order = np.argsort(-values, kind="stable")
    sorted_vals = values[order]
    # boundaries between runs of equal values in the descending order
    breaks = np.flatnonzero(np.diff(sorted_vals) != 0) + 1
    for block in np.split(order, breaks):
        for d in block:
            a, b = max(0, d + lo_off), min(n_days, d + hi_off + 1)
            seg = covered[a:b]
            fresh = ~seg
            n_alarmed += int(fresh.sum())
            n_hit += int((is_event[a:b] & fresh).sum())
            seg[:] = True
        if n_hit > prev_hit:
            prev_hit = n_hit
            points.append((n_alarmed / n_days, (len(ev) - n_hit) / len(ev)))
            thresholds.append(float(values[block[0]]))
    return ErrorDiagram(tuple(points), tuple(thresholds), len(ev), n_days)


def skill_summary(d: ErrorDiagram) -> float:
    """Mean of 1 - alarm_fraction - miss_fraction; zero on the chance line."""
    if not d.points:
        raise ValueError("diagram has no points")
    return float(np.mean([1.0 - x - y for x, y in d.points]))


def write_svg(path: str | Path, diagrams: dict[str, ErrorDiagram], title: str = "") -> None:
    """Scatter of diagram points with the y = 1 - x chance line."""
    size, pad = 400, 50
    span = size - 2 * pad
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

    def px(x: float, y: float) -> tuple[float, float]:
        return pad + x * span, size - pad - y * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        '<line x1="{:.2f}" y1="{:.2f}" x2="{:.2f}" y2="{:.2f}" stroke="gray" stroke-dasharray="4,3"/>'.format(*px(0, 1), *px(1, 0)),
        f'<text x="{size / 2}" y="{size - 12}" text-anchor="middle" font-size="12">alarm fraction</text>',
        f'<text x="14" y="{size / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {size / 2})">miss fraction</text>',
    ]
    if title:
        parts.append(f'<text x="{size / 2}" y="24" text-anchor="middle" font-size="14">{_xml(title)}</text>')
    for k, (label, d) in enumerate(sorted(diagrams.items())):
        c = colours[k % len(colours)]
        for x, y in d.points:
            cx, cy = px(x, y)
            parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="3" fill="{c}"/>')
        parts.append(f'<text x="{size - pad - 4}" y="{pad + 16 + 14 * k}" text-anchor="end" font-size="11" fill="{c}">{_xml(label)}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def _xml(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")

