"""Pattern recognition over LPPL fits: classes, groups, informative parameters,
questionnaires, traits, features and the alarm index.

Traits are (position triple, value triple) pairs taken from a ternary
questionnaire. Internally each trait is packed into one integer,
``combo_rank * 27 + value_code``, so that counting traits over thousands of
days is a bincount.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from bubblealarm.lppl import BubbleType, FitResult
from bubblealarm.market_data import DateLike, to_date, to_day

log = logging.getLogger(__name__)

PARAM_NAMES = ("m", "omega", "phi", "B", "b", "q")
FEATURESET_VERSION = 1


class EventType(str, Enum):
    CRASH = "crash"
    REBOUND = "rebound"

    @property
    def bubble_type(self) -> BubbleType:
        return BubbleType.BUBBLE if self is EventType.CRASH else BubbleType.NEGATIVE_BUBBLE


@dataclass(frozen=True)
class Grouping:
    n_groups: int = 14
    dtmin: int = 110
    dtmax: int = 1500

    def __post_init__(self):
        if self.n_groups < 1 or self.dtmin >= self.dtmax:
            raise ValueError("need n_groups >= 1 and dtmin < dtmax")

    def group_of(self, width: int) -> int:
        if not self.dtmin <= width <= self.dtmax:
            raise ValueError(f"window width {width} outside [{self.dtmin}, {self.dtmax}]")
        # ceil((w - dtmin) * n / span) in exact integer arithmetic; edges fall to the lower bin
        num = (width - self.dtmin) * self.n_groups
        return max(1, -(-num // (self.dtmax - self.dtmin)))


def assign_groups(fits: Sequence[FitResult], n_groups: int = 14, dtmin: int = 110, dtmax: int = 1500) -> list[int]:
    grouping = Grouping(n_groups, dtmin, dtmax)
    return [grouping.group_of(f.window.width) for f in fits]


def _near(tc: float, events: np.ndarray, near_days: float) -> bool:
    if len(events) == 0:
        return False
    return bool(np.min(np.abs(events - tc)) <= near_days)


def assign_class(fit: FitResult, events: Iterable[int], near_days: int = 20) -> int:
    """1 (close) when tc lies within ``near_days`` of some event, else 2."""
    ev = np.asarray(sorted(events), dtype=float)
    return 1 if _near(fit.params.tc, ev, near_days) else 2


@dataclass(frozen=True)
class ClassifiedFit:
    fit: FitResult
    cls: int
    group: int


def classify(
    fits: Sequence[FitResult], events: Iterable[int], near_days: int = 20, grouping: Grouping = Grouping()
) -> list[ClassifiedFit]:
    ev = np.asarray(sorted(events), dtype=float)
    return [
        ClassifiedFit(f, 1 if _near(f.params.tc, ev, near_days) else 2, grouping.group_of(f.window.width)) for f in fits
    ]


def param_value(fit: FitResult, name: str) -> float:
    if name in ("b", "q"):
        return getattr(fit, name)
    return getattr(fit.params, name)


def _param_matrix(fits: Sequence[FitResult]) -> np.ndarray:
    return np.array([[param_value(f, p) for p in PARAM_NAMES] for f in fits], dtype=float).reshape(len(fits), len(PARAM_NAMES))


@dataclass(frozen=True)
class InformativeParameter:
    group: int
    param: str
    regions: tuple[tuple[float, float], ...]
    ks_stat: float
    p_value: float

    def contains(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        hit = np.zeros(v.shape, dtype=bool)
        for lo, hi in self.regions:
            hit |= (v >= lo) & (v <= hi)
        return hit

    def to_json(self) -> dict:
        return {
            "group": self.group,
            "param": self.param,
            "regions": [[_enc(lo), _enc(hi)] for lo, hi in self.regions],
            "ks_stat": self.ks_stat,
            "p_value": self.p_value,
        }

    @classmethod
    def from_json(cls, d: dict) -> "InformativeParameter":
        regions = tuple((_dec(lo, -math.inf), _dec(hi, math.inf)) for lo, hi in d["regions"])
        return cls(int(d["group"]), d["param"], regions, float(d["ks_stat"]), float(d["p_value"]))


def _enc(x: float):
    return None if math.isinf(x) else float(x)


def _dec(x, default: float) -> float:
    return default if x is None else float(x)


def dominant_regions(class1: np.ndarray, class2: np.ndarray, n_grid: int = 512) -> tuple[tuple[float, float], ...]:
    """Intervals where the Class-I KDE exceeds the Class-II KDE.

    Densities use Gaussian kernels with Silverman bandwidth on a grid spanning
    the pooled sample. Interval ends sit halfway between grid points; runs that
    touch either end of the grid extend to infinity.
    """
    pooled = np.concatenate([class1, class2])
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi <= lo:
        return ()
    grid = np.linspace(lo, hi, n_grid)
    with np.errstate(all="ignore"):
        try:
            d1 = stats.gaussian_kde(class1, bw_method="silverman")(grid)
            d2 = stats.gaussian_kde(class2, bw_method="silverman")(grid)
        except np.linalg.LinAlgError:
            return ()
    above = d1 > d2
    if not above.any():
        return ()
    half = (grid[1] - grid[0]) / 2
    edges = np.diff(above.astype(np.int8))
    starts = list(np.flatnonzero(edges == 1) + 1)
    stops = list(np.flatnonzero(edges == -1))
    if above[0]:
        starts.insert(0, 0)
    if above[-1]:
        stops.append(n_grid - 1)
    regions = []
    for s, e in zip(starts, stops):
        a = -math.inf if s == 0 else float(grid[s] - half)
        b = math.inf if e == n_grid - 1 else float(grid[e] + half)
        regions.append((a, b))
    return tuple(regions)


def informative_params(
    classified: Sequence[ClassifiedFit],
    significance: float = 0.01,
    min_count: int = 10,
    n_grid: int = 512,
) -> list[InformativeParameter]:
    """(group, parameter) pairs whose Class-I and Class-II samples differ under a two-sample KS test."""
    if not classified:
        return []
    values = _param_matrix([c.fit for c in classified])
    cls = np.array([c.cls for c in classified])
    groups = np.array([c.group for c in classified])
    if not ((cls == 1).any() and (cls == 2).any()):
        log.warning("learning set holds a single class; no informative parameters")
        return []
    out = []
    for g in np.unique(groups):
        in_g = groups == g
        for j, name in enumerate(PARAM_NAMES):
            x1 = values[in_g & (cls == 1), j]
            x2 = values[in_g & (cls == 2), j]
            if len(x1) < min_count or len(x2) < min_count:
                log.debug("group %d %s skipped: %d/%d samples", g, name, len(x1), len(x2))
                continue
            res = stats.ks_2samp(x1, x2)
            if res.pvalue > significance:
                continue
            regions = dominant_regions(x1, x2, n_grid)
            if not regions:
                continue
            out.append(InformativeParameter(int(g), name, regions, float(res.statistic), float(res.pvalue)))
    return out


@dataclass(frozen=True)
class Questionnaire:
    day: int
    answers: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.answers)


def build_questionnaire(
    day: DateLike,
    fits: Sequence[FitResult],
    informative: Sequence[InformativeParameter],
    near_days: int = 20,
    grouping: Grouping = Grouping(),
) -> Questionnaire:
    if not informative:
        raise ValueError("no informative parameters")
    d = to_day(day)
    collected = [f for f in fits if abs(f.params.tc - d) <= near_days]
    groups = np.array([grouping.group_of(f.window.width) for f in collected], dtype=int)
    values = _param_matrix(collected)
    answers = []
    for ip in informative:
        in_g = groups == ip.group
        total = int(in_g.sum())
        hits = int(ip.contains(values[in_g, PARAM_NAMES.index(ip.param)]).sum()) if total else 0
        answers.append(int(np.sign(2 * hits - total)))
    return Questionnaire(d, tuple(answers))


@dataclass(frozen=True, order=True)
class Trait:
    positions: tuple[int, int, int]
    values: tuple[int, int, int]


class TraitCodec:
    """Bijection between traits of a length-L questionnaire and dense integers."""

    def __init__(self, length: int):
        if length < 3:
            raise ValueError(f"questionnaire length {length} < 3 has no traits")
        self.length = length
        self.combos = np.array(list(combinations(range(length), 3)), dtype=np.int64)
        self.size = len(self.combos) * 27

    def encode_answers(self, answers: np.ndarray) -> np.ndarray:
        """Codes of every trait of each questionnaire row; shape (n, C(L,3))."""
        a = np.atleast_2d(np.asarray(answers, dtype=np.int64)) + 1
        c = self.combos
        vals = 9 * a[:, c[:, 0]] + 3 * a[:, c[:, 1]] + a[:, c[:, 2]]
        return np.arange(len(c), dtype=np.int64)[None, :] * 27 + vals

    def encode(self, trait: Trait) -> int:
        i, j, k = trait.positions
        L = self.length
        # rank of (i, j, k) among lexicographic 3-combinations of range(L)
        rank = sum(math.comb(L - 1 - p, 2) for p in range(i))
        rank += sum(L - 1 - p for p in range(i + 1, j))
        rank += k - j - 1
        vi, vj, vk = (v + 1 for v in trait.values)
        return rank * 27 + 9 * vi + 3 * vj + vk

    def decode(self, code: int) -> Trait:
        rank, v = divmod(int(code), 27)
        i, j, k = (int(x) for x in self.combos[rank])
        return Trait((i, j, k), (v // 9 - 1, (v // 3) % 3 - 1, v % 3 - 1))


def enumerate_traits(qn: Questionnaire) -> list[Trait]:
    L = len(qn.answers)
    if L < 3:
        raise ValueError(f"questionnaire length {L} < 3 has no traits")
    a = qn.answers
    return [Trait((i, j, k), (a[i], a[j], a[k])) for i, j, k in combinations(range(L), 3)]


@dataclass
class FeatureSet:
    alpha: int
    beta: int
    class1_features: frozenset[Trait]
    class2_features: frozenset[Trait]
    informative: list[InformativeParameter] = field(default_factory=list)
    near_days: int = 20
    event_type: EventType = EventType.CRASH
    grouping: Grouping = field(default_factory=Grouping)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.class1_features & self.class2_features:
            raise ValueError("a trait cannot be both a Class-I and a Class-II feature")

    @property
    def length(self) -> int:
        return len(self.informative)

    @cached_property
    def _lookup(self) -> np.ndarray | None:
        """Per-code label: +1 for F_I, -1 for F_II, 0 otherwise."""
        if self.length < 3:
            return None
        codec = TraitCodec(self.length)
        lut = np.zeros(codec.size, dtype=np.int8)
        for t in self.class1_features:
            lut[codec.encode(t)] = 1
        for t in self.class2_features:
            lut[codec.encode(t)] = -1
        return lut

    def to_json(self) -> dict:
        return {
            "version": FEATURESET_VERSION,
            "event_type": self.event_type.value,
            "alpha": self.alpha,
            "beta": self.beta,
            "near_days": self.near_days,
            "grouping": {"n_groups": self.grouping.n_groups, "dtmin": self.grouping.dtmin, "dtmax": self.grouping.dtmax},
            "informative": [ip.to_json() for ip in self.informative],
            "class1_features": [list(t.positions) + list(t.values) for t in sorted(self.class1_features)],
            "class2_features": [list(t.positions) + list(t.values) for t in sorted(self.class2_features)],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json(cls, d: dict) -> "FeatureSet":
        if d.get("version") != FEATURESET_VERSION:
            raise ValueError(f"unsupported feature-set version {d.get('version')!r}")

        def traits(rows):
            return frozenset(Trait(tuple(r[:3]), tuple(r[3:])) for r in rows)

        return cls(
            alpha=int(d["alpha"]),
            beta=int(d["beta"]),
            class1_features=traits(d["class1_features"]),
            class2_features=traits(d["class2_features"]),
            informative=[InformativeParameter.from_json(x) for x in d["informative"]],
            near_days=int(d["near_days"]),
            event_type=EventType(d["event_type"]),
            grouping=Grouping(**d["grouping"]),
            diagnostics=d.get("diagnostics", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureSet":
        return cls.from_json(json.loads(Path(path).read_text()))


def _count_codes(codes: np.ndarray, weights: np.ndarray, size: int) -> np.ndarray:
    if codes.size == 0:
        return np.zeros(size, dtype=np.int64)
    reps = np.repeat(weights, codes.shape[1])
    return np.bincount(codes.ravel(), weights=reps, minlength=size).astype(np.int64)


def qualify_from_counts(count1: np.ndarray, count2: np.ndarray, alpha: int, beta: int) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks (F_I, F_II) from per-trait counts in T_I and T_II."""
    f1 = (count1 > alpha) & (count2 < beta)
    f2 = (count1 <= alpha) & (count2 >= beta)
    return f1, f2


def qualify_features(
    learning_days: Sequence[tuple[DateLike, bool, Questionnaire]],
    alpha: int,
    beta: int,
    informative: Sequence[InformativeParameter] = (),
    **meta,
) -> FeatureSet:
    """Promote traits to Class-I / Class-II features by their T_I / T_II frequencies.

    F_I: seen more than ``alpha`` times near events and fewer than ``beta``
    times elsewhere. F_II: at most ``alpha`` times near events and at least
    ``beta`` times elsewhere.
    """
    if not learning_days:
        return FeatureSet(alpha, beta, frozenset(), frozenset(), list(informative), **meta)
    L = len(learning_days[0][2])
    if any(len(q) != L for _, _, q in learning_days):
        raise ValueError("questionnaires of unequal length")
    if L < 3:
        log.warning("questionnaire length %d < 3: no traits, empty feature set", L)
        return FeatureSet(alpha, beta, frozenset(), frozenset(), list(informative), **meta)
    codec = TraitCodec(L)
    answers = np.array([q.answers for _, _, q in learning_days], dtype=np.int64)
    near = np.array([bool(n) for _, n, _ in learning_days])
    counts = []
    for mask in (near, ~near):
        uniq, mult = (np.unique(answers[mask], axis=0, return_counts=True) if mask.any() else (np.empty((0, L), np.int64), np.empty(0)))
        counts.append(_count_codes(codec.encode_answers(uniq) if len(uniq) else np.empty((0, 0), np.int64), mult, codec.size))
    f1, f2 = qualify_from_counts(counts[0], counts[1], alpha, beta)
    fs = FeatureSet(
        alpha,
        beta,
        frozenset(codec.decode(c) for c in np.flatnonzero(f1)),
        frozenset(codec.decode(c) for c in np.flatnonzero(f2)),
        list(informative),
        **meta,
    )
    fs.diagnostics.update(
        {
            "questionnaire_length": L,
            "learning_days": int(len(learning_days)),
            "near_event_days": int(near.sum()),
            "n_class1_features": len(fs.class1_features),
            "n_class2_features": len(fs.class2_features),
        }
    )
    return fs


def alarm_from_traits(traits: Iterable[Trait], fs: FeatureSet) -> float:
    n1 = n2 = 0
    for t in traits:
        if t in fs.class1_features:
            n1 += 1
        elif t in fs.class2_features:
            n2 += 1
    return n1 / (n1 + n2) if n1 + n2 else 0.0


def alarm_index(day: DateLike, fits: Sequence[FitResult], fs: FeatureSet, near_days: int | None = None) -> float:
    """Share of the day's qualified traits that are Class-I features (0 if none qualify)."""
    if fs.length < 3:
        return 0.0
    near = fs.near_days if near_days is None else near_days
    qn = build_questionnaire(day, fits, fs.informative, near, fs.grouping)
    return alarm_from_traits(enumerate_traits(qn), fs)


@dataclass(frozen=True)
class AlarmSeries:
    event_type: EventType
    start: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or np.any((v < 0) | (v > 1)) or not np.all(np.isfinite(v)):
            raise ValueError("alarm values must be a 1-d series in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end(self) -> int:
        return self.start + len(self.values) - 1

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.start, self.start + len(self.values), dtype=np.int64)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "value"])
            for d, v in zip(self.days, self.values):
                w.writerow([to_date(d).isoformat(), repr(float(v))])

    @classmethod
    def from_csv(cls, path: str | Path, event_type: EventType | str = EventType.CRASH) -> "AlarmSeries":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty alarm series")
        days = np.array([to_day(r["date"]) for r in rows])
        if np.any(np.diff(days) != 1):
            raise ValueError(f"{path}: alarm series must cover consecutive calendar days")
        return cls(EventType(event_type), int(days[0]), np.array([float(r["value"]) for r in rows]))


class QuestionnaireEngine:
    """Vectorized questionnaires for many days against one fixed fit table."""

    def __init__(self, fits: Sequence[FitResult], informative: Sequence[InformativeParameter], grouping: Grouping = Grouping()):
        order = sorted(range(len(fits)), key=lambda i: (fits[i].params.tc, i))
        fits = [fits[i] for i in order]
        self.tc = np.array([f.params.tc for f in fits], dtype=float)
        self.t2 = np.array([f.window.t2 for f in fits], dtype=np.int64)
        groups = np.array([grouping.group_of(f.window.width) for f in fits], dtype=int)
        values = _param_matrix(fits)
        L = len(informative)
        self.member = np.zeros((len(fits), L), dtype=np.int32)
        self.hit = np.zeros((len(fits), L), dtype=np.int32)
        for l, ip in enumerate(informative):
            in_g = groups == ip.group
            self.member[:, l] = in_g
            self.hit[:, l] = in_g & ip.contains(values[:, PARAM_NAMES.index(ip.param)])
        self.length = L

    def answers(self, days: np.ndarray, near_days: int, causal: bool) -> np.ndarray:
        """Answer matrix (len(days), L); with ``causal`` only fits with t2 <= day count."""
        days = np.asarray(days, dtype=np.int64)
        out = np.zeros((len(days), self.length), dtype=np.int64)
        lo = np.searchsorted(self.tc, days - near_days, side="left")
        hi = np.searchsorted(self.tc, days + near_days, side="right")
        for r, (d, a, b) in enumerate(zip(days, lo, hi)):
            if a == b:
                continue
            rows = slice(a, b)
            member, hit = self.member[rows], self.hit[rows]
            if causal:
                keep = self.t2[rows] <= d
                if not keep.any():
                    continue
                member, hit = member[keep], hit[keep]
            out[r] = np.sign(2 * hit.sum(axis=0) - member.sum(axis=0))
        return out


def select_fits(fits: Iterable[FitResult], event_type: EventType) -> list[FitResult]:
    target = EventType(event_type).bubble_type
    return [f for f in fits if f.bubble_type is target]


def alarm_series(
    fits: Sequence[FitResult],
    fs: FeatureSet,
    start: DateLike,
    end: DateLike,
    event_type: EventType | str | None = None,
    prediction: bool = True,
) -> AlarmSeries:
    """Alarm index on every calendar day of [start, end].

    Only fits whose bubble type matches the event type enter. In prediction
    mode a day sees only fits whose window ended on or before it.
    """
    et = fs.event_type if event_type is None else EventType(event_type)
    lo, hi = to_day(start), to_day(end)
    if hi < lo:
        raise ValueError("alarm range end precedes start")
    days = np.arange(lo, hi + 1, dtype=np.int64)
    lut = fs._lookup
    if lut is None:
        return AlarmSeries(et, lo, np.zeros(len(days)))
    engine = QuestionnaireEngine(select_fits(fits, et), fs.informative, fs.grouping)
    answers = engine.answers(days, fs.near_days, causal=prediction)
    codec = TraitCodec(fs.length)
    values = np.zeros(len(days))
    uniq, inverse = np.unique(answers, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    labels = lut[codec.encode_answers(uniq)]
    n1 = (labels == 1).sum(axis=1)
    n2 = (labels == -1).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_q = np.where(n1 + n2 > 0, n1 / np.maximum(n1 + n2, 1), 0.0)
    values[:] = per_q[inverse]
    return AlarmSeries(et, lo, values)


@dataclass(frozen=True)
class LearnConfig:
    alpha: int = 7
    beta: int = 100
    near_days: int = 20
    # learning-set admission: tc no later than admit_days after the window end (None disables)
    admit_days: int | None = 20
    significance: float = 0.01
    min_count: int = 10
    n_grid: int = 512
    grouping: Grouping = field(default_factory=Grouping)


def learn(
    fits: Sequence[FitResult],
    events: Iterable[int],
    event_type: EventType | str,
    scan_start: DateLike,
    cut: DateLike,
    cfg: LearnConfig = LearnConfig(),
) -> FeatureSet:
    """Build the feature set for one event type from fits whose windows end by ``cut``.

    ``events`` are the target events (crashes or rebounds) of the learning
    period; the questionnaire scan runs daily over [scan_start, cut].
    """
    et = EventType(event_type)
    lo, hi = to_day(scan_start), to_day(cut)
    ev = np.array(sorted(e for e in events if e <= hi), dtype=np.int64)
    typed = [f for f in select_fits(fits, et) if f.window.t2 <= hi]
    admitted = [f for f in typed if cfg.admit_days is None or f.params.tc - f.window.t2 <= cfg.admit_days]
    classified = classify(admitted, ev, cfg.near_days, cfg.grouping)
    informative = informative_params(classified, cfg.significance, cfg.min_count, cfg.n_grid)
    meta = dict(near_days=cfg.near_days, event_type=et, grouping=cfg.grouping)
    diag = {
        "learning_fits": len(typed),
        "admitted_fits": len(admitted),
        "class1_fits": sum(c.cls == 1 for c in classified),
        "learning_events": int(len(ev)),
        "n_informative": len(informative),
    }
    days = np.arange(lo, hi + 1, dtype=np.int64)
    if len(informative) < 3:
        log.warning("%s: %d informative parameters, too few for traits", et.value, len(informative))
        fs = FeatureSet(cfg.alpha, cfg.beta, frozenset(), frozenset(), informative, **meta)
        fs.diagnostics.update(diag)
        return fs
    engine = QuestionnaireEngine(typed, informative, cfg.grouping)
    answers = engine.answers(days, cfg.near_days, causal=False)
    if len(ev):
        dist = np.min(np.abs(days[:, None] - ev[None, :]), axis=1)
        near = dist <= cfg.near_days
    else:
        near = np.zeros(len(days), dtype=bool)
    learning_days = [(int(d), bool(n), Questionnaire(int(d), tuple(int(x) for x in a))) for d, n, a in zip(days, near, answers)]
    fs = qualify_features(learning_days, cfg.alpha, cfg.beta, informative, **meta)
    fs.diagnostics.update(diag)
    return fs
