"""Config-driven end-to-end runs with persisted, checksummed stage artifacts."""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import multiprocessing as mp
import time
from dataclasses import dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from bubblealarm.backtest import Strategy, backtest_report
from bubblealarm.evaluation import error_diagram, skill_summary, write_svg
from bubblealarm.events import EventLabels, label_events, read_events, write_events
from bubblealarm.lppl import FitConfig, FitResult, fit_window
from bubblealarm.market_data import (
    PriceSeries,
    RateSeries,
    load_price_series,
    load_riskfree,
    to_day,
    write_series,
)
from bubblealarm.patrec import AlarmSeries, EventType, FeatureSet, Grouping, LearnConfig, alarm_series, learn
from bubblealarm.windows import Window, generate_windows, write_windows

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunConfig:
    prices: str = ""
    date_col: str = "Date"
    price_col: str = "Adj Close"
    riskfree: str = ""
    riskfree_col: str = "Rate"
    riskfree_const: float = 0.0
    t10: str = ""
    t20: str = ""
    dt1: int = 50
    dt2: int = -50
    dtmin: int = 110
    dtmax: int = 1500
    m_min: float = 0.01
    m_max: float = 0.99
    omega_min: float = 2.0
    omega_max: float = 25.0
    tc_horizon: float = 0.5
    grid: str = "8,6,6"
    n_refine: int = 16
    starts_per_tc: int = 2
    max_iter: int = 500
    xatol: float = 1e-4
    min_observations: int = 30
    jobs: int = 1
    learning_cut: str = ""
    half_window: int = 100
    near_days: int = 20
    admit_days: int = 20
    n_groups: int = 14
    alpha: int = 7
    beta: int = 100
    significance: float = 0.01
    min_count: int = 10
    da: int = 41
    orientation: str = "forward"
    strategy: str = "longshort"
    n: str = "20,30,40,60"
    vol_override: float = -1.0  # negative disables
    seed: int = 0

    SECTIONS = {
        "data": ("prices", "date_col", "price_col", "riskfree", "riskfree_col", "riskfree_const"),
        "windows": ("t10", "t20", "dt1", "dt2", "dtmin", "dtmax"),
        "fit": ("m_min", "m_max", "omega_min", "omega_max", "tc_horizon", "grid", "n_refine", "starts_per_tc", "max_iter", "xatol", "min_observations", "jobs"),
        "patrec": ("learning_cut", "half_window", "near_days", "admit_days", "n_groups", "alpha", "beta", "significance", "min_count"),
        "eval": ("da", "orientation"),
        "backtest": ("strategy", "n", "vol_override"),
        "run": ("seed",),
    }

    @classmethod
    def from_ini(cls, path: str | Path) -> "RunConfig":
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise ConfigError(f"cannot read config {path}")
        return cls.from_parser(cp, base=Path(path).parent)

    @classmethod
    def from_parser(cls, cp: configparser.ConfigParser, base: Path | None = None) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        known = {k for keys in cls.SECTIONS.values() for k in keys}
        for section in cp.sections():
            if section not in cls.SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in cp.items(section):
                if key not in known:
                    raise ConfigError(f"unknown config key {section}.{key}")
                kind = types[key]
                try:
                    kwargs[key] = int(raw) if kind == "int" else float(raw) if kind == "float" else raw.strip()
                except ValueError:
                    raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {kind}") from None
        cfg = cls(**kwargs)
        if base is not None:
            for key in ("prices", "riskfree"):
                val = getattr(cfg, key)
                if val and not Path(val).is_absolute():
                    setattr(cfg, key, str((base / val).resolve()))
        return cfg

    def to_ini(self) -> str:
        lines = []
        for section, keys in self.SECTIONS.items():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {getattr(self, k)}" for k in keys)
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()

    @property
    def lookbacks(self) -> list[int]:
        return [int(x) for x in str(self.n).split(",") if x.strip()]

    def fit_config(self) -> FitConfig:
        grid = tuple(int(x) for x in self.grid.split(","))
        if len(grid) != 3:
            raise ConfigError("fit.grid needs three comma-separated counts")
        return FitConfig(
            m_bounds=(self.m_min, self.m_max),
            omega_bounds=(self.omega_min, self.omega_max),
            tc_horizon=self.tc_horizon,
            grid=grid,
            n_refine=self.n_refine if self.n_refine > 0 else None,
            starts_per_tc=self.starts_per_tc if self.starts_per_tc > 0 else None,
            max_iter=self.max_iter,
            xatol=self.xatol,
            min_observations=self.min_observations,
        )

    def learn_config(self) -> LearnConfig:
        return LearnConfig(
            alpha=self.alpha,
            beta=self.beta,
            near_days=self.near_days,
            admit_days=self.admit_days if self.admit_days >= 0 else None,
            significance=self.significance,
            min_count=self.min_count,
            grouping=Grouping(self.n_groups, self.dtmin, self.dtmax),
        )

    def validate(self, series: PriceSeries | None = None) -> None:
        if not self.prices:
            raise ConfigError("data.prices is required")
        if not self.learning_cut:
            raise ConfigError("patrec.learning_cut is required")
        t10, t20 = self.span(series)
        cut = to_day(self.learning_cut)
        if not t10 < cut < t20:
            raise ConfigError(f"learning cut {self.learning_cut} must lie strictly between t10 and t20")
        if not (0 < self.dtmin <= self.dtmax and self.dt1 > 0 and self.dt2 < 0):
            raise ConfigError("invalid window grid parameters")
        if self.alpha < 0 or self.beta < 0 or not 0 < self.significance <= 1:
            raise ConfigError("invalid feature qualification parameters")
        if self.da < 1 or self.near_days < 0 or self.half_window < 1 or self.n_groups < 1:
            raise ConfigError("invalid patrec/eval parameters")
        if self.orientation not in ("forward", "centered"):
            raise ConfigError("eval.orientation must be forward or centered")
        Strategy(self.strategy)
        if not self.lookbacks or min(self.lookbacks) < 1:
            raise ConfigError("backtest.n needs positive look-backs")
        self.fit_config()

    def span(self, series: PriceSeries | None = None) -> tuple[int, int]:
        if self.t10 and self.t20:
            return to_day(self.t10), to_day(self.t20)
        if series is None:
            raise ConfigError("t10/t20 unset and no price series to infer them from")
        return to_day(self.t10) if self.t10 else series.first_day, to_day(self.t20) if self.t20 else series.last_day


# fit-stage worker state, set once per process
_WORKER: dict = {}


def _init_worker(series: PriceSeries, cfg: FitConfig) -> None:
    _WORKER["series"] = series
    _WORKER["cfg"] = cfg


def _fit_one(w: Window) -> list[FitResult]:
    series, cfg = _WORKER["series"], _WORKER["cfg"]
    try:
        return fit_window(series, w, cfg)
    except ValueError as exc:
        log.info("skipping window %s..%s: %s", w.start, w.end, exc)
        return []


def fit_all(series: PriceSeries, windows: Sequence[Window], cfg: FitConfig, jobs: int = 1) -> Iterator[FitResult]:
    """Fits for every window, in window order regardless of ``jobs``."""
    if jobs <= 1:
        _init_worker(series, cfg)
        for w in windows:
            yield from _fit_one(w)
        return
    with mp.get_context("spawn").Pool(jobs, initializer=_init_worker, initargs=(series, cfg)) as pool:
        for res in pool.imap(_fit_one, windows, chunksize=8):
            yield from res


def write_fits(path: str | Path, fits: Iterable[FitResult]) -> int:
    n = 0
    with Path(path).open("w") as fh:
        for i, f in enumerate(fits):
            fh.write(json.dumps(f.to_record(i)) + "\n")
            n += 1
    return n


def read_fits(path: str | Path) -> list[FitResult]:
    with Path(path).open() as fh:
        return [FitResult.from_record(json.loads(line)) for line in fh if line.strip()]


def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_riskfree_for(cfg: RunConfig, start: int) -> RateSeries:
    if cfg.riskfree:
        return load_riskfree(cfg.riskfree, cfg.date_col, cfg.riskfree_col)
    return RateSeries.constant(cfg.riskfree_const, start)


@dataclass
class Manifest:
    config_sha256: str
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def add(self, stage: str, *paths: Path) -> None:
        self.artifacts.setdefault(stage, {})
        for p in paths:
            self.artifacts[stage][p.name] = sha256(p)

    def checksums(self) -> dict:
        return {name: digest for stage in self.artifacts.values() for name, digest in stage.items()}

    def write(self, path: Path) -> None:
        payload = {
            "config_sha256": self.config_sha256,
            "artifacts": self.artifacts,
            "summary": self.summary,
            "timings_seconds": self.timings,
            "created": date.today().isoformat(),
        }
        path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _prediction_events(labels: EventLabels, et: EventType, lo: int, hi: int) -> list[int]:
    return [int(e) for e in labels.of_type(et.value) if lo <= e <= hi]


def run_pipeline(cfg: RunConfig, outdir: str | Path) -> Manifest:
    """Run every stage in order, persisting artifacts and a checksum manifest in ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(cfg.digest())
    (out / "config.ini").write_text(cfg.to_ini())
    state: dict = {}

    def stage(name: str):
        def deco(fn):
            t0 = time.perf_counter()
            try:
                fn()
            except Exception as exc:  # any stage failure aborts the run with its name
                manifest.timings[name] = round(time.perf_counter() - t0, 3)
                manifest.write(out / "manifest.json")
                raise StageError(name, exc) from exc
            manifest.timings[name] = round(time.perf_counter() - t0, 3)
            log.info("stage %s done in %.2fs", name, manifest.timings[name])
            return fn

        return deco

    @stage("ingest")
    def _():
        series = load_price_series(cfg.prices, cfg.date_col, cfg.price_col)
        cfg.validate(series)
        state["series"] = series
        write_series(out / "prices.csv", series)
        manifest.add("ingest", out / "prices.csv")

    t10, t20 = cfg.span(state["series"])
    cut = to_day(cfg.learning_cut)

    @stage("windows")
    def _():
        wins = generate_windows(t10, t20, cfg.dt1, cfg.dt2, cfg.dtmin, cfg.dtmax)
        if not wins:
            raise ValueError("empty window grid")
        state["windows"] = wins
        write_windows(out / "windows.csv", wins)
        manifest.add("windows", out / "windows.csv")

    @stage("fit")
    def _():
        n = write_fits(out / "fits.jsonl", fit_all(state["series"], state["windows"], cfg.fit_config(), cfg.jobs))
        state["fits"] = read_fits(out / "fits.jsonl")
        manifest.summary["n_fits"] = n
        manifest.add("fit", out / "fits.jsonl")

    @stage("label")
    def _():
        full = label_events(state["series"], cfg.half_window)
        learning = label_events(state["series"].truncate(cut), cfg.half_window)
        write_events(out / "events.csv", full)
        write_events(out / "events_learning.csv", learning)
        state["events"], state["events_learning"] = full, learning
        manifest.add("label", out / "events.csv", out / "events_learning.csv")

    @stage("learn")
    def _():
        lcfg = cfg.learn_config()
        for et in EventType:
            fs = learn(state["fits"], state["events_learning"].of_type(et.value), et, t10, cut, lcfg)
            fs.save(out / f"features_{et.value}.json")
            state[f"features_{et.value}"] = fs
            manifest.add("learn", out / f"features_{et.value}.json")

    @stage("alarm")
    def _():
        for et in EventType:
            fs = state[f"features_{et.value}"]
            pred = alarm_series(state["fits"], fs, cut + 1, t20, et, prediction=True)
            back = alarm_series(state["fits"], fs, t10, cut, et, prediction=False)
            pred.to_csv(out / f"alarm_{et.value}.csv")
            back.to_csv(out / f"alarm_{et.value}_learning.csv")
            state[f"alarm_{et.value}"] = pred
            manifest.add("alarm", out / f"alarm_{et.value}.csv", out / f"alarm_{et.value}_learning.csv")

    @stage("evaluate")
    def _():
        for et in EventType:
            alarm: AlarmSeries = state[f"alarm_{et.value}"]
            events = _prediction_events(state["events"], et, alarm.start, alarm.end)
            if not events:
                log.warning("no %s events in the prediction period; diagram skipped", et.value)
                manifest.summary[f"skill_{et.value}"] = None
                continue
            diag = error_diagram(alarm, events, cfg.da, cfg.orientation)
            diag.to_csv(out / f"diagram_{et.value}.csv")
            write_svg(out / f"diagram_{et.value}.svg", {et.value: diag}, f"{et.value} error diagram")
            manifest.summary[f"skill_{et.value}"] = skill_summary(diag)
            manifest.add("evaluate", out / f"diagram_{et.value}.csv", out / f"diagram_{et.value}.svg")

    @stage("backtest")
    def _():
        rf = load_riskfree_for(cfg, state["series"].first_day)
        override = cfg.vol_override if cfg.vol_override >= 0 else None
        for n in cfg.lookbacks:
            report, traj = backtest_report(
                state["alarm_rebound"], state["alarm_crash"], state["series"], rf, cfg.strategy, n, override
            )
            (out / f"backtest_n{n}.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
            traj.to_csv(out / f"wealth_n{n}.csv")
            manifest.add("backtest", out / f"backtest_n{n}.json", out / f"wealth_n{n}.csv")

    manifest.write(out / "manifest.json")
    return manifest

