"""LPPL evaluation and calibration on a single window.

The model for the expected log-price is

    ln E[p(t)] = A + B (tc - t)^m + C (tc - t)^m cos(omega ln(tc - t) - phi)

Only (tc, m, omega) are searched numerically; A, B and the two quadrature
amplitudes C1 = C cos(phi), C2 = C sin(phi) solve an ordinary least-squares
problem for any fixed nonlinear triple.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from bubblealarm.market_data import PriceSeries
from bubblealarm.windows import Window

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
MIN_SLAVE_OBSERVATIONS = 8


class DomainError(ValueError):
    """Model evaluated at or beyond the critical time."""


class DegenerateFitError(ArithmeticError):
    """The linear design matrix is rank deficient."""


class BubbleType(str, Enum):
    BUBBLE = "Bubble"
    NEGATIVE_BUBBLE = "NegativeBubble"
    NEITHER = "Neither"


@dataclass(frozen=True)
class LpplParams:
    tc: float
    m: float
    omega: float
    phi: float
    A: float
    B: float
    C: float

    @classmethod
    def from_linear(cls, tc: float, m: float, omega: float, A: float, B: float, C1: float, C2: float) -> "LpplParams":
        C = math.hypot(C1, C2)
        phi = math.atan2(C2, C1) % TWO_PI if C > 0 else 0.0
        return cls(tc=tc, m=m, omega=omega, phi=phi, A=A, B=B, C=C)


@dataclass(frozen=True)
class FitConfig:
    m_bounds: tuple[float, float] = (0.01, 0.99)
    omega_bounds: tuple[float, float] = (2.0, 25.0)
    # tc searched in (t2, t2 + tc_horizon * width]
    tc_horizon: float = 0.5
    tc_min_gap: float = 1e-3
    grid: tuple[int, int, int] = (8, 6, 6)
    # refine only the n_refine best grid points; None refines all of them
    n_refine: int | None = 16
    # when set, take the best starts from each tc slice of the grid instead of
    # the global best, so distinct critical-time basins get explored
    starts_per_tc: int | None = 2
    max_iter: int = 500
    xatol: float = 1e-4
    n_keep: int = 10
    min_observations: int = 30
    dedup: tuple[float, float, float] = (5.0, 0.02, 0.2)

    def __post_init__(self):
        lo, hi = self.m_bounds
        if not 0 < lo < hi < 1:
            raise ValueError("m bounds must satisfy 0 < lo < hi < 1")
        if not 0 < self.omega_bounds[0] < self.omega_bounds[1]:
            raise ValueError("omega bounds must be positive and ordered")
        if self.tc_horizon <= 0 or self.n_keep < 1 or self.min_observations < MIN_SLAVE_OBSERVATIONS:
            raise ValueError("invalid fit configuration")


@dataclass(frozen=True)
class FitResult:
    window: Window
    params: LpplParams
    q: float
    b: float = field(init=False)
    bubble_type: BubbleType = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "b", damping_b(self.params))
        object.__setattr__(self, "bubble_type", classify_bubble_type(self.params))

    def to_record(self, index: int) -> dict:
        p = self.params
        return {
            "index": index,
            "t1": self.window.start.isoformat(),
            "t2": self.window.end.isoformat(),
            "tc": p.tc,
            "m": p.m,
            "omega": p.omega,
            "phi": p.phi,
            "A": p.A,
            "B": p.B,
            "C": p.C,
            "q": self.q,
            "b": self.b,
            "bubble_type": self.bubble_type.value,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FitResult":
        from bubblealarm.market_data import to_day

        win = Window(t2=to_day(rec["t2"]), t1=to_day(rec["t1"]))
        params = LpplParams(*(float(rec[k]) for k in ("tc", "m", "omega", "phi", "A", "B", "C")))
        return cls(win, params, float(rec["q"]))


def lppl_value(p: LpplParams, t):
    """ln expected price at time(s) ``t`` (calendar-day ordinals)."""
    t_arr = np.asarray(t, dtype=float)
    dt = p.tc - t_arr
    if np.any(dt <= 0):
        raise DomainError(f"LPPL undefined for t >= tc={p.tc}")
    power = dt ** p.m
    out = p.A + p.B * power + p.C * power * np.cos(p.omega * np.log(dt) - p.phi)
    return float(out) if out.ndim == 0 else out


def _design(t: np.ndarray, tc: float, m: float, omega: float) -> np.ndarray:
    dt = tc - t
    f = dt**m
    phase = omega * np.log(dt)
    return np.column_stack([np.ones_like(t), f, f * np.cos(phase), f * np.sin(phase)])


def slave_linear(nl: Sequence[float], t, y) -> tuple[float, float, float, float, float]:
    """Least-squares (A, B, C1, C2) for fixed (tc, m, omega), plus RMS residual q."""
    tc, m, omega = (float(v) for v in nl)
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < MIN_SLAVE_OBSERVATIONS:
        raise ValueError(f"need at least {MIN_SLAVE_OBSERVATIONS} observations, got {len(t)}")
    if tc <= t.max():
        raise DomainError("tc must exceed every observation time")
    X = _design(t, tc, m, omega)
    # column scaling keeps the SVD rank test meaningful for large (tc - t)^m
    scale = np.abs(X).max(axis=0)
    scale[scale == 0] = 1.0
    coef, _, rank, _ = np.linalg.lstsq(X / scale, y, rcond=None)
    if rank < 4:
        raise DegenerateFitError(f"rank {rank} design at tc={tc:.3f}, m={m:.4f}, omega={omega:.4f}")
    coef = coef / scale
    resid = y - X @ coef
    q = math.sqrt(float(resid @ resid) / len(y))
    A, B, C1, C2 = (float(c) for c in coef)
    return A, B, C1, C2, q


def rms_residual(p: LpplParams, t, y) -> float:
    resid = np.asarray(y, dtype=float) - lppl_value(p, t)
    return math.sqrt(float(np.mean(resid**2)))


def damping_b(p: LpplParams) -> float:
    return -p.B * p.m - abs(p.C) * math.sqrt(p.m**2 + p.omega**2)


def classify_bubble_type(p: LpplParams) -> BubbleType:
    b = damping_b(p)
    if p.B < 0 and b >= 0:
        return BubbleType.BUBBLE
    if p.B > 0 and b <= 0:
        return BubbleType.NEGATIVE_BUBBLE
    return BubbleType.NEITHER


class _Objective:
    """q over the unit cube, mapped affinely onto the (tc, m, omega) bounds."""

    def __init__(self, t: np.ndarray, y: np.ndarray, w: Window, cfg: FitConfig):
        # shift time origin to the window end for conditioning
        self.t = t - w.t2
        self.y = y
        self.t2 = float(w.t2)
        gap = cfg.tc_min_gap
        self.lo = np.array([gap, cfg.m_bounds[0], cfg.omega_bounds[0]])
        self.span = np.array([cfg.tc_horizon * w.width - gap, cfg.m_bounds[1] - cfg.m_bounds[0], cfg.omega_bounds[1] - cfg.omega_bounds[0]])
        self.n = len(y)
        self.ones = np.ones_like(self.t)
        self.work = np.ones((4, self.n))

    def to_params(self, u: np.ndarray) -> tuple[float, float, float]:
        tc_rel, m, omega = self.lo + self.span * np.clip(u, 0.0, 1.0)
        return tc_rel, m, omega

    def __call__(self, u: np.ndarray) -> float:
        tc_rel, m, omega = self.to_params(u)
        log_dt = np.log(tc_rel - self.t)
        f = np.exp(m * log_dt)
        phase = omega * log_dt
        X = self.work
        X[1] = f
        np.cos(phase, out=X[2])
        X[2] *= f
        np.sin(phase, out=X[3])
        X[3] *= f
        X /= np.abs(X).max(axis=1, keepdims=True)
        G = X @ X.T
        try:
            coef = np.linalg.solve(G, X @ self.y)
        except np.linalg.LinAlgError:
            return math.inf
        resid = self.y - coef @ X
        return math.sqrt(float(resid @ resid) / self.n)

    def grid_q(self, U: np.ndarray) -> np.ndarray:
        """q at many unit-cube points via regularized normal equations.

        Transcendentals are shared between points with a common tc, m or omega,
        so a full tensor grid costs little more than its marginals.
        """
        P = self.lo + self.span * U
        tcs, tc_i = np.unique(P[:, 0], return_inverse=True)
        ms, m_i = np.unique(P[:, 1], return_inverse=True)
        ws, w_i = np.unique(P[:, 2], return_inverse=True)
        log_dt = np.log(tcs[:, None] - self.t[None, :])
        F = np.exp(ms[None, :, None] * log_dt[:, None, :])
        phase = ws[None, :, None] * log_dt[:, None, :]
        cos, sin = np.cos(phase), np.sin(phase)
        f = F[tc_i, m_i]
        X = np.stack([np.broadcast_to(self.ones, f.shape), f, f * cos[tc_i, w_i], f * sin[tc_i, w_i]], axis=1)
        X = X / np.abs(X).max(axis=2, keepdims=True)
        XtX = np.einsum("kin,kjn->kij", X, X)
        Xty = X @ self.y
        XtX += 1e-12 * np.eye(4)[None] * np.trace(XtX, axis1=1, axis2=2)[:, None, None]
        coef = np.linalg.solve(XtX, Xty[..., None])[..., 0]
        resid = self.y[None, :] - np.einsum("kin,ki->kn", X, coef)
        return np.sqrt(np.mean(resid**2, axis=1))


def _start_grid(cfg: FitConfig) -> np.ndarray:
    axes = [(np.arange(n) + 0.5) / n for n in cfg.grid]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


def _dedup(results: list[FitResult], cfg: FitConfig) -> list[FitResult]:
    dtc, dm, dw = cfg.dedup
    kept: list[FitResult] = []
    for r in sorted(results, key=lambda r: r.q):
        p = r.params
        if any(abs(p.tc - k.params.tc) < dtc and abs(p.m - k.params.m) < dm and abs(p.omega - k.params.omega) < dw for k in kept):
            continue
        kept.append(r)
        if len(kept) == cfg.n_keep:
            break
    return kept


def window_data(series: PriceSeries, w: Window) -> tuple[np.ndarray, np.ndarray]:
    """Observation times and ln prices with t1 <= date <= t2."""
    days, prices = series.between(w.t1, w.t2)
    return days.astype(float), np.log(prices)


def fit_window(series: PriceSeries, w: Window, cfg: FitConfig | None = None) -> list[FitResult]:
    """Multi-start LPPL calibration; up to ``cfg.n_keep`` distinct basins sorted by q."""
    cfg = cfg or FitConfig()
    t, y = window_data(series, w)
    if len(t) < cfg.min_observations:
        raise ValueError(f"window {w.start}..{w.end} has {len(t)} observations, need {cfg.min_observations}")
    return fit_arrays(t, y, w, cfg)


def fit_arrays(t: np.ndarray, y: np.ndarray, w: Window, cfg: FitConfig) -> list[FitResult]:
    obj = _Objective(t, y, w, cfg)
    starts = _start_grid(cfg)
    with np.errstate(all="ignore"):
        grid_q = obj.grid_q(starts)
    grid_q[~np.isfinite(grid_q)] = np.inf
    order = _pick_starts(grid_q, cfg)

    results: list[FitResult] = []
    for i in order:
        if not np.isfinite(grid_q[i]):
            continue
        opt = minimize(
            obj,
            starts[i],
            method="Nelder-Mead",
            bounds=[(0.0, 1.0)] * 3,
            options={"xatol": cfg.xatol, "fatol": math.inf, "maxiter": cfg.max_iter, "initial_simplex": _simplex(starts[i], cfg)},
        )
        tc_rel, m, omega = obj.to_params(opt.x)
        tc = obj.t2 + tc_rel
        try:
            A, B, C1, C2, q = slave_linear((tc, m, omega), t, y)
        except (DegenerateFitError, DomainError):
            continue
        if not all(math.isfinite(v) for v in (A, B, C1, C2, q)):
            continue
        results.append(FitResult(w, LpplParams.from_linear(tc, m, omega, A, B, C1, C2), q))
    if not results:
        log.info("no converged fit for window %s..%s", w.start, w.end)
    return _dedup(results, cfg)


def _pick_starts(grid_q: np.ndarray, cfg: FitConfig) -> np.ndarray:
    order = np.argsort(grid_q, kind="stable")
    if cfg.starts_per_tc is not None:
        # grid index is row-major with tc slowest
        slice_of = order // (cfg.grid[1] * cfg.grid[2])
        rank_in_slice = np.zeros(len(order), dtype=int)
        seen = np.zeros(cfg.grid[0], dtype=int)
        for k, s in enumerate(slice_of):
            rank_in_slice[k] = seen[s]
            seen[s] += 1
        order = order[rank_in_slice < cfg.starts_per_tc]
    if cfg.n_refine is not None:
        order = order[: cfg.n_refine]
    return order


def _simplex(u0: np.ndarray, cfg: FitConfig) -> np.ndarray:
    # initial edge of half a grid cell along each axis
    steps = 0.5 / np.asarray(cfg.grid, dtype=float)
    sim = np.tile(u0, (4, 1))
    for k in range(3):
        sim[k + 1, k] += steps[k] if u0[k] + steps[k] <= 1 else -steps[k]
    return sim
