"""Alarm-driven trading strategies and their performance table."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from bubblealarm.market_data import PriceSeries, RateSeries, to_date
from bubblealarm.patrec import AlarmSeries

TRADING_DAYS = 252


class Strategy(str, Enum):
    LONG = "long"
    SHORT = "short"
    LONG_SHORT = "longshort"


@dataclass(frozen=True)
class DailySeries:
    """Values on consecutive calendar days from ``start``; NaN marks undefined days."""

    start: int
    values: np.ndarray

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.start, self.start + len(self.values), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ExposureSeries:
    start: int
    values: np.ndarray
    strategy: Strategy
    n: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        ok = v[np.isfinite(v)]
        lo, hi = {Strategy.LONG: (0.0, 1.0), Strategy.SHORT: (-1.0, 0.0), Strategy.LONG_SHORT: (-1.0, 1.0)}[self.strategy]
        if np.any(ok < lo - 1e-12) or np.any(ok > hi + 1e-12):
            raise ValueError(f"{self.strategy.value} exposure outside [{lo}, {hi}]")
        object.__setattr__(self, "values", v)

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.start, self.start + len(self.values), dtype=np.int64)

    def on(self, days: np.ndarray) -> np.ndarray:
        idx = np.asarray(days, dtype=np.int64) - self.start
        if np.any(idx < 0) or np.any(idx >= len(self.values)):
            raise ValueError("exposure requested outside its range")
        return self.values[idx]


@dataclass(frozen=True)
class WealthTrajectory:
    days: np.ndarray  # trading days; wealth starts at 1.0 on days[0]
    values: np.ndarray
    daily_returns: np.ndarray  # return from days[i] to days[i + 1]
    riskfree_returns: np.ndarray
    exposures: np.ndarray  # exposure held over each return interval

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "wealth", "daily_return", "exposure"])
            rets = np.concatenate([[0.0], self.daily_returns])
            expo = np.concatenate([self.exposures, [np.nan]])
            for d, v, r, e in zip(self.days, self.values, rets, expo):
                w.writerow([to_date(d).isoformat(), repr(float(v)), repr(float(r)), "" if np.isnan(e) else repr(float(e))])


@dataclass(frozen=True)
class PerformanceReport:
    ann_return: float
    volatility: float
    downside_dev: float
    sharpe: float | None
    max_drawdown: float
    abs_exposure: float
    ann_turnover: float
    start: str
    end: str

    def to_table(self) -> dict:
        """Keys mirror the performance-table row names."""
        return {
            "Ann Ret": self.ann_return,
            "Vol": self.volatility,
            "Downside dev": self.downside_dev,
            "Sharpe": self.sharpe,
            "Max DD": self.max_drawdown,
            "Abs Expo": self.abs_exposure,
            "Ann turnover": self.ann_turnover,
            "period": [self.start, self.end],
        }

    def as_dict(self) -> dict:
        return asdict(self)


def moving_average(a: AlarmSeries | DailySeries | np.ndarray, n: int, start: int | None = None) -> DailySeries:
    """Trailing n-day mean; the first n - 1 days are NaN."""
    if isinstance(a, (AlarmSeries, DailySeries)):
        values, origin = np.asarray(a.values, dtype=float), a.start
    else:
        values, origin = np.asarray(a, dtype=float), 0 if start is None else start
    if n < 1:
        raise ValueError("look-back must be at least one day")
    if n > len(values):
        raise ValueError(f"look-back {n} longer than series ({len(values)} days)")
    out = np.full(len(values), np.nan)
    # direct window means: no running-sum drift, exact for n = 1
    out[n - 1 :] = sliding_window_view(values, n).mean(axis=1)
    return DailySeries(origin, out)


def exposure(
    ai_r: DailySeries,
    ai_c: DailySeries,
    strategy: Strategy | str,
    n: int = 0,
    vol_override: float | None = None,
) -> ExposureSeries:
    """Signed market weight from averaged rebound (ai_r) and crash (ai_c) alarms.

    With ``vol_override`` set, a long-short book switches to the pure short
    position on days where both averages exceed the threshold.
    """
    strategy = Strategy(strategy)
    if ai_r.start != ai_c.start or len(ai_r) != len(ai_c):
        raise ValueError("rebound and crash averages must cover identical days")
    r, c = np.asarray(ai_r.values, float), np.asarray(ai_c.values, float)
    if strategy is Strategy.LONG:
        theta = r.copy()
    elif strategy is Strategy.SHORT:
        theta = -c
    else:
        theta = r - c
        if vol_override is not None:
            both_high = (r > vol_override) & (c > vol_override)
            theta = np.where(both_high, -c, theta)
    return ExposureSeries(ai_r.start, theta, strategy, n)


def constant_exposure(exp: ExposureSeries, level: float) -> ExposureSeries:
    v = np.where(np.isfinite(exp.values), level, np.nan)
    strategy = Strategy.LONG if level >= 0 else Strategy.SHORT
    return ExposureSeries(exp.start, v, strategy, exp.n)


def _trading_days(prices: PriceSeries, lo: int, hi: int) -> np.ndarray:
    days, _ = prices.between(lo, hi)
    return days


def run_strategy(
    exp: ExposureSeries,
    prices: PriceSeries,
    rf: RateSeries,
    start: int | None = None,
    end: int | None = None,
) -> WealthTrajectory:
    """Compound theta * market return + (1 - |theta|) * rf / 252 between trading days.

    The weight decided on trading day d earns the market move from d to the
    next trading day; the cash sleeve earns one day of interest per interval.
    """
    lo = exp.start if start is None else start
    hi = exp.start + len(exp.values) - 1 if end is None else end
    days = _trading_days(prices, lo, hi)
    if len(days) < 2:
        raise ValueError("backtest period holds fewer than two trading days")
    theta = exp.on(days[:-1])
    if np.any(~np.isfinite(theta)):
        bad = days[:-1][~np.isfinite(theta)][0]
        raise ValueError(f"exposure undefined on {to_date(bad)}")
    px = prices.values_on(days)
    mkt = px[1:] / px[:-1] - 1.0
    cash = rf.values_on(days[:-1]) / TRADING_DAYS
    rets = theta * mkt + (1.0 - np.abs(theta)) * cash
    wealth = np.concatenate([[1.0], np.cumprod(1.0 + rets)])
    return WealthTrajectory(days, wealth, rets, cash, theta)


def _annualize(growth: float, n: int) -> float:
    return growth ** (TRADING_DAYS / n) - 1.0


def max_drawdown(wealth: np.ndarray) -> float:
    w = np.asarray(wealth, dtype=float)
    peak = np.maximum.accumulate(w)
    return float(np.max(1.0 - w / peak))


def performance(w: WealthTrajectory) -> PerformanceReport:
    """Annualized statistics over the trading-day returns of ``w`` (sample stdev, 252 days)."""
    r = w.daily_returns
    n = len(r)
    if n < 1:
        raise ValueError("need at least two trading days")
    ann_ret = _annualize(float(w.values[-1] / w.values[0]), n)
    ann_rf = _annualize(float(np.prod(1.0 + w.riskfree_returns)), n)
    sd = float(np.std(r, ddof=1)) if n > 1 else 0.0
    vol = math.sqrt(TRADING_DAYS) * sd
    downside = np.minimum(r - w.riskfree_returns, 0.0)
    dd = math.sqrt(TRADING_DAYS) * float(np.std(downside, ddof=1)) if n > 1 else 0.0
    sharpe = (ann_ret - ann_rf) / vol if vol > 0 else None
    theta = w.exposures
    turnover = TRADING_DAYS * float(np.mean(np.abs(np.diff(theta)))) if len(theta) > 1 else 0.0
    return PerformanceReport(
        ann_return=ann_ret,
        volatility=vol,
        downside_dev=dd,
        sharpe=sharpe,
        max_drawdown=max_drawdown(w.values),
        abs_exposure=float(np.mean(np.abs(theta))),
        ann_turnover=turnover,
        start=to_date(w.days[0]).isoformat(),
        end=to_date(w.days[-1]).isoformat(),
    )


def backtest_report(
    ai_rebound: AlarmSeries,
    ai_crash: AlarmSeries,
    prices: PriceSeries,
    rf: RateSeries,
    strategy: Strategy | str,
    n: int,
    vol_override: float | None = None,
) -> tuple[dict, WealthTrajectory]:
    """Strategy, market and constant-exposure benchmark reports for one look-back."""
    exp = exposure(moving_average(ai_rebound, n), moving_average(ai_crash, n), strategy, n, vol_override)
    valid = np.flatnonzero(np.isfinite(exp.values))
    lo, hi = exp.start + int(valid[0]), exp.start + int(valid[-1])
    traj = run_strategy(exp, prices, rf, lo, hi)
    market = run_strategy(constant_exposure(exp, 1.0), prices, rf, lo, hi)
    mean_signed = float(np.mean(traj.exposures))
    mean_abs = float(np.mean(np.abs(traj.exposures)))
    report = {
        "strategy": Strategy(strategy).value,
        "n": n,
        "vol_override": vol_override,
        "Strategy": performance(traj).to_table(),
        "Market": performance(market).to_table(),
        "Benchmark (mean signed exposure)": {
            "exposure": mean_signed,
            **performance(run_strategy(constant_exposure(exp, mean_signed), prices, rf, lo, hi)).to_table(),
        },
        "Benchmark (mean absolute exposure)": {
            "exposure": mean_abs,
            **performance(run_strategy(constant_exposure(exp, mean_abs), prices, rf, lo, hi)).to_table(),
        },
    }
    return report, traj
