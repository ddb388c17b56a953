"""Command-line entry point: one subcommand per pipeline stage plus ``run`` and ``sweep``."""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from pathlib import Path

from bubblealarm.backtest import Strategy, backtest_report
from bubblealarm.evaluation import error_diagram, skill_summary, write_svg
from bubblealarm.events import label_events, read_events, write_events
from bubblealarm.lppl import FitConfig
from bubblealarm.market_data import DataError, RateSeries, load_price_series, load_riskfree, to_day, write_series
from bubblealarm.patrec import AlarmSeries, EventType, FeatureSet, Grouping, LearnConfig, alarm_series, learn
from bubblealarm.pipeline import ConfigError, RunConfig, StageError, fit_all, read_fits, run_pipeline, write_fits
from bubblealarm.windows import generate_windows, read_windows, write_windows

log = logging.getLogger("bubblealarm")

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE = 0, 1, 2


class ValidationError(ValueError):
    """Bad arguments or inputs; maps to exit code 1."""


def _prices(args):
    return load_price_series(args.prices, args.date_col, args.price_col)


def _riskfree(args, start: int) -> RateSeries:
    if args.riskfree:
        return load_riskfree(args.riskfree, args.date_col, args.rate_col)
    return RateSeries.constant(args.riskfree_const, start)


def _add_price_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--prices", required=True, help="CSV with a date and a price column")
    p.add_argument("--date-col", default="Date")
    p.add_argument("--price-col", default="Adj Close")


def cmd_ingest(args) -> int:
    series = _prices(args)
    write_series(args.out, series)
    print(f"{len(series)} observations, {series.dates[0]} .. {series.dates[-1]}")
    return EXIT_OK


def cmd_windows(args) -> int:
    if args.t10 and args.t20:
        t10, t20 = to_day(args.t10), to_day(args.t20)
    else:
        if not args.prices:
            raise ValidationError("give --t10 and --t20, or --prices to infer them")
        series = _prices(args)
        t10 = to_day(args.t10) if args.t10 else series.first_day
        t20 = to_day(args.t20) if args.t20 else series.last_day
    wins = generate_windows(t10, t20, args.dt1, args.dt2, args.dtmin, args.dtmax)
    write_windows(args.out, wins)
    print(f"{len(wins)} windows")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = FitConfig(
        m_bounds=(args.m_min, args.m_max),
        omega_bounds=(args.omega_min, args.omega_max),
        tc_horizon=args.tc_horizon,
        grid=tuple(int(x) for x in args.grid.split(",")),
        n_refine=args.n_refine if args.n_refine > 0 else None,
        starts_per_tc=args.starts_per_tc if args.starts_per_tc > 0 else None,
        max_iter=args.max_iter,
        xatol=args.xatol,
        min_observations=args.min_observations,
    )
    n = write_fits(args.out, fit_all(_prices(args), read_windows(args.windows), cfg, args.jobs))
    print(f"{n} fits")
    return EXIT_OK


def cmd_label(args) -> int:
    series = _prices(args)
    if args.until:
        series = series.truncate(args.until)
    labels = label_events(series, args.half_window)
    write_events(args.out, labels)
    print(f"{len(labels.crashes)} crashes, {len(labels.rebounds)} rebounds")
    return EXIT_OK


def _learn_config(args) -> LearnConfig:
    return LearnConfig(
        alpha=args.alpha,
        beta=args.beta,
        near_days=args.near_days,
        admit_days=args.admit_days if args.admit_days >= 0 else None,
        significance=args.significance,
        min_count=args.min_count,
        grouping=Grouping(args.n_groups, args.dtmin, args.dtmax),
    )


def cmd_learn(args) -> int:
    fits = read_fits(args.fits)
    if not fits:
        raise ValidationError("fit store is empty")
    events = read_events(args.events).of_type(args.type)
    start = to_day(args.start) if args.start else min(f.window.t1 for f in fits)
    fs = learn(fits, events, args.type, start, args.cut, _learn_config(args))
    fs.save(args.out)
    print(json.dumps(fs.diagnostics, sort_keys=True))
    return EXIT_OK


def cmd_alarm(args) -> int:
    fs = FeatureSet.load(args.features)
    a = alarm_series(read_fits(args.fits), fs, args.start, args.end, prediction=not args.backfill)
    a.to_csv(args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    alarm = AlarmSeries.from_csv(args.alarm, args.type)
    events = [int(e) for e in read_events(args.events).of_type(alarm.event_type.value) if alarm.start <= e <= alarm.end]
    if not events:
        raise ValidationError(f"no {alarm.event_type.value} events inside the alarm range")
    d = error_diagram(alarm, events, args.da, args.orientation)
    d.to_csv(args.out)
    if args.svg:
        write_svg(args.svg, {alarm.event_type.value: d}, f"{alarm.event_type.value} error diagram")
    print(f"skill {skill_summary(d):.4f} over {len(d.points)} points")
    return EXIT_OK


def cmd_backtest(args) -> int:
    prices = _prices(args)
    rf = _riskfree(args, prices.first_day)
    ai_r = AlarmSeries.from_csv(args.alarm_rebound, EventType.REBOUND)
    ai_c = AlarmSeries.from_csv(args.alarm_crash, EventType.CRASH)
    report, traj = backtest_report(ai_r, ai_c, prices, rf, args.strategy, args.n, args.vol_override)
    Path(args.out).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    if args.wealth_csv:
        traj.to_csv(args.wealth_csv)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = RunConfig.from_ini(args.config)
    if args.jobs is not None:
        cfg.jobs = args.jobs
    manifest = run_pipeline(cfg, args.out)
    print(json.dumps(manifest.summary, sort_keys=True))
    return EXIT_OK


def _sweep_one(task) -> list[dict]:
    fits, ev_learn, ev_all, prices, rf, lo, cut, hi, alpha, beta, lookbacks, lcfg, da, strategy, override = task
    row = {"alpha": alpha, "beta": beta}
    alarms = {}
    for et in EventType:
        cfg = LearnConfig(alpha, beta, lcfg.near_days, lcfg.admit_days, lcfg.significance, lcfg.min_count, lcfg.n_grid, lcfg.grouping)
        fs = learn(fits, ev_learn.of_type(et.value), et, lo, cut, cfg)
        alarms[et] = alarm_series(fits, fs, cut + 1, hi, et)
        events = [int(e) for e in ev_all.of_type(et.value) if cut < e <= hi]
        row[f"skill_{et.value}"] = skill_summary(error_diagram(alarms[et], events, da)) if events else None
    out = []
    for n in lookbacks:
        report, _ = backtest_report(alarms[EventType.REBOUND], alarms[EventType.CRASH], prices, rf, strategy, n, override)
        out.append({**row, "n": n, "sharpe": report["Strategy"]["Sharpe"], "ann_return": report["Strategy"]["Ann Ret"]})
    return out


def cmd_sweep(args) -> int:
    cfg = RunConfig.from_ini(args.config)
    run_dir = Path(args.run_dir)
    prices = load_price_series(run_dir / "prices.csv")
    cfg.validate(prices)
    t10, t20 = cfg.span(prices)
    cut = to_day(cfg.learning_cut)
    rf = RateSeries.constant(cfg.riskfree_const, prices.first_day)
    if cfg.riskfree:
        rf = load_riskfree(cfg.riskfree, cfg.date_col, cfg.riskfree_col)
    fits = read_fits(run_dir / "fits.jsonl")
    ev_learn = read_events(run_dir / "events_learning.csv", cfg.half_window)
    ev_all = read_events(run_dir / "events.csv", cfg.half_window)
    lookbacks = [int(x) for x in args.n.split(",")] if args.n else cfg.lookbacks
    override = cfg.vol_override if cfg.vol_override >= 0 else None
    tasks = [
        (fits, ev_learn, ev_all, prices, rf, t10, cut, t20, a, b, lookbacks, cfg.learn_config(), cfg.da, cfg.strategy, override)
        for a, b in itertools.product(_int_list(args.alpha), _int_list(args.beta))
    ]
    jobs = args.jobs or cfg.jobs
    if jobs > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(jobs) as pool:
            rows = [r for chunk in pool.map(_sweep_one, tasks) for r in chunk]
    else:
        rows = [r for t in tasks for r in _sweep_one(t)]
    with Path(args.out).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["alpha", "beta", "n", "skill_crash", "skill_rebound", "sharpe", "ann_return"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"{len(rows)} sweep rows")
    return EXIT_OK


def _int_list(s: str) -> list[int]:
    try:
        return [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bubblealarm", description="LPPL bubble diagnostics and crash/rebound alarms.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a price CSV and write its normalized copy")
    _add_price_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("windows", help="generate the sliding-window grid")
    p.add_argument("--prices")
    p.add_argument("--date-col", default="Date")
    p.add_argument("--price-col", default="Adj Close")
    p.add_argument("--t10")
    p.add_argument("--t20")
    p.add_argument("--dt1", type=int, default=50)
    p.add_argument("--dt2", type=int, default=-50)
    p.add_argument("--dtmin", type=int, default=110)
    p.add_argument("--dtmax", type=int, default=1500)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_windows)

    p = sub.add_parser("fit", help="calibrate the LPPL on every window")
    _add_price_args(p)
    p.add_argument("--windows", required=True)
    p.add_argument("--m-min", type=float, default=0.01)
    p.add_argument("--m-max", type=float, default=0.99)
    p.add_argument("--omega-min", type=float, default=2.0)
    p.add_argument("--omega-max", type=float, default=25.0)
    p.add_argument("--tc-horizon", type=float, default=0.5)
    p.add_argument("--grid", default="8,6,6", help="start grid sizes for tc,m,omega")
    p.add_argument("--n-refine", type=int, default=16, help="grid starts refined per window; 0 refines all")
    p.add_argument("--starts-per-tc", type=int, default=2, help="best starts kept per tc slice; 0 ranks globally")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--xatol", type=float, default=1e-4)
    p.add_argument("--min-observations", type=int, default=30)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("label", help="label crashes and rebounds")
    _add_price_args(p)
    p.add_argument("--half-window", type=int, default=100)
    p.add_argument("--until", help="label on the series truncated at this date")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("learn", help="build a feature set from fits and learning-period events")
    p.add_argument("--fits", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--type", choices=[e.value for e in EventType], required=True)
    p.add_argument("--cut", required=True, help="last day of the learning period")
    p.add_argument("--start", help="first questionnaire day (default: earliest window start)")
    p.add_argument("--alpha", type=int, default=7)
    p.add_argument("--beta", type=int, default=100)
    p.add_argument("--near-days", type=int, default=20)
    p.add_argument("--admit-days", type=int, default=20, help="negative admits every fit")
    p.add_argument("--significance", type=float, default=0.01)
    p.add_argument("--min-count", type=int, default=10)
    p.add_argument("--n-groups", type=int, default=14)
    p.add_argument("--dtmin", type=int, default=110, help="narrowest window width covered by the groups")
    p.add_argument("--dtmax", type=int, default=1500, help="widest window width covered by the groups")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("alarm", help="compute a daily alarm index")
    p.add_argument("--fits", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--from", dest="start", required=True)
    p.add_argument("--to", dest="end", required=True)
    p.add_argument("--backfill", action="store_true", help="use all fits, not only those ending by each day")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_alarm)

    p = sub.add_parser("evaluate", help="error diagram of an alarm series")
    p.add_argument("--alarm", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--type", choices=[e.value for e in EventType], default=EventType.CRASH.value)
    p.add_argument("--da", type=int, default=41)
    p.add_argument("--orientation", choices=["forward", "centered"], default="forward")
    p.add_argument("--out", required=True)
    p.add_argument("--svg")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("backtest", help="alarm-driven strategy backtest")
    _add_price_args(p)
    rf = p.add_mutually_exclusive_group()
    rf.add_argument("--riskfree")
    rf.add_argument("--riskfree-const", type=float, default=0.0)
    p.add_argument("--rate-col", default="Rate")
    p.add_argument("--alarm-rebound", required=True)
    p.add_argument("--alarm-crash", required=True)
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default="longshort")
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--vol-override", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--wealth-csv")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="alpha/beta/n grid over a finished run")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--alpha", default="7")
    p.add_argument("--beta", default="100")
    p.add_argument("--n", help="look-backs (default: from config)")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; usage problems are validation failures here
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if isinstance(exc.cause, (ConfigError, DataError)) else EXIT_STAGE
    except (ValidationError, ConfigError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"error: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
