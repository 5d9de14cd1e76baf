"""``motorway-flow``: simulate, clean, profile, predict and evaluate from the shell.

Every option can also come from a JSON file given with ``--config``; keys
are the option names without dashes (``threshold_k``, ``train`` ...), and
flags on the command line win over the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from datetime import date
from pathlib import Path

import numpy as np

from .cleaning import CleaningConfig, clean_store, write_masks
from .errors import MotorwayFlowError, NoFeasibleStations
from .evaluation import EvaluationPlan, parse_dates, parse_horizons, run_evaluation
from .flowdata import (FlowStore, TimePoint, compute_profiles, format_count, ingest_flows,
                       read_profiles, write_flows, write_profiles)
from .graph import DEFAULT_SPEED, load_graph, write_topology
from .predictors import FlowTimeline, Method, feasible_targets, forecast_series
from .simulator import inject_anomalies, load_scenario, simulate

PREDICTION_HEADER = ["station_id", "date", "interval_index", "method", "r", "p", "value"]

# option defaults, applied after the config file so that flags > file > these
DEFAULTS = {
    "window_w": 20,
    "threshold_k": 4.0,
    "alpha": 0.5,
    "speed": DEFAULT_SPEED,
    "jobs": None,
    "seed": None,
    "days": None,
    "method": None,
    "r": None,
    "p": None,
    "train": None,
    "test": None,
    "station": None,
    "at": None,
    "profiles": None,
}


class UsageError(Exception):
    pass


def _horizon(text) -> int:
    try:
        value = int(text)
    except (TypeError, ValueError):
        raise argparse.ArgumentTypeError(f"invalid horizon {text!r}") from None
    if not 1 <= value <= 5:
        raise argparse.ArgumentTypeError(f"{value} outside 1..5")
    return value


def _horizons(text) -> tuple[int, ...]:
    try:
        return parse_horizons(str(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _positive_float(text) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _unit_float(text) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {value}")
    return value


def _methods(text) -> tuple[Method, ...]:
    try:
        return tuple(Method.parse(m) for m in str(text).split(",") if m.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown method in {text!r}; use dpp, bktr or intr") from None


def _dates(text) -> tuple[date, ...]:
    try:
        return parse_dates(str(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _stations(text) -> tuple[str, ...]:
    return tuple(s.strip() for s in str(text).split(",") if s.strip())


def _moment(text) -> TimePoint:
    """``YYYY-MM-DD:INDEX`` or ``YYYY-MM-DDTHH:MM``."""
    text = str(text)
    try:
        if "T" in text:
            day_s, clock = text.split("T", 1)
            hh, mm = (int(x) for x in clock.split(":")[:2])
            return TimePoint(date.fromisoformat(day_s), (hh * 3600 + mm * 60) // 180)
        day_s, idx = text.rsplit(":", 1)
        return TimePoint(date.fromisoformat(day_s), int(idx))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad time {text!r}, use YYYY-MM-DD:INDEX") from None


CONVERTERS = {
    "window_w": _positive_int, "threshold_k": _positive_float, "alpha": _unit_float,
    "speed": _positive_float, "jobs": _positive_int, "seed": int, "days": int,
    "train": _dates, "test": _dates, "station": _stations, "at": _moment,
}


def _add_common(p: argparse.ArgumentParser, graph=True, flows=True):
    p.add_argument("--config", help="JSON file with option defaults")
    if graph:
        p.add_argument("--graph-stations", help="stations CSV (id,kind)")
        p.add_argument("--graph-edges", help="edges CSV (from,to,length_m)")
        p.add_argument("--speed", type=_positive_float, help="reference speed in m/s (default 25)")
    if flows:
        p.add_argument("--flows", help="flow CSV (station_id,date,interval_index,count)")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--jobs", type=_positive_int, help="worker threads (default: all cores)")


def _add_cleaning(p: argparse.ArgumentParser):
    p.add_argument("--window-w", type=_positive_int, help="moving-average window in intervals (default 20)")
    p.add_argument("--threshold-k", type=_positive_float, help="outlier threshold multiplier (default 4)")
    p.add_argument("--alpha", type=_unit_float, help="neighbour weight when imputing (default 0.5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motorway-flow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate detector counts from a scenario")
    _add_common(p, flows=False)
    p.add_argument("--scenario", required=False, help="scenario JSON file")
    p.add_argument("--days", type=int, help="override the scenario's number of days")

    p = sub.add_parser("clean", help="flag outliers and impute them")
    _add_common(p)
    _add_cleaning(p)
    p.add_argument("--train", type=_dates, help="days used for the profiles (default: all)")

    p = sub.add_parser("profile", help="compute weekday/interval mean profiles")
    _add_common(p, graph=False)
    p.add_argument("--train", type=_dates, help="training days (default: all)")

    p = sub.add_parser("predict", help="forecast flows with one method")
    _add_common(p)
    p.add_argument("--profiles", help="profile CSV; computed from --train when absent")
    p.add_argument("--method", type=str.lower, choices=["dpp", "bktr", "intr"])
    p.add_argument("--r", type=_horizon, help="look-back horizon 1..5")
    p.add_argument("--p", type=_horizon, help="forecast horizon 1..5")
    p.add_argument("--train", type=_dates, help="profile days (default: all)")
    p.add_argument("--test", type=_dates, help="days whose intervals are forecast (default: all)")
    p.add_argument("--station", type=_stations, help="comma-separated target stations")
    p.add_argument("--at", type=_moment, help="single current time YYYY-MM-DD:INDEX")

    p = sub.add_parser("evaluate", help="score methods over a train/test split")
    _add_common(p)
    p.add_argument("--profiles", help="profile CSV; computed from --train when absent")
    p.add_argument("--method", type=_methods, help="comma-separated methods (default: all)")
    p.add_argument("--r", type=_horizons, help="look-back horizons, e.g. 1..5")
    p.add_argument("--p", type=_horizons, help="forecast horizons, e.g. 1..5")
    p.add_argument("--train", type=_dates, help="training days, e.g. 2017-01-02..2017-01-29")
    p.add_argument("--test", type=_dates, help="test days")
    p.add_argument("--station", type=_stations, help="comma-separated target stations")
    return parser


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset options from ``--config`` then from :data:`DEFAULTS`."""
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
    converters = dict(CONVERTERS)
    if args.command == "predict":
        converters.update(r=_horizon, p=_horizon, method=lambda m: str(m).lower())
    elif args.command == "evaluate":
        converters.update(r=_horizons, p=_horizons, method=_methods)
    for key in set(vars(args)) | set(DEFAULTS):
        if key in ("command", "config"):
            continue
        if getattr(args, key, None) is not None:
            continue
        if key in cfg:
            value = cfg[key]
            conv = converters.get(key)
            try:
                value = conv(value) if conv and value is not None else value
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config {key}: {exc}") from None
            setattr(args, key, value)
        elif key in DEFAULTS:
            setattr(args, key, DEFAULTS[key])
    if args.jobs is None:
        args.jobs = os.cpu_count() or 1
    return args


def _need(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required for {args.command}")


def _graph(args):
    _need(args, "graph_stations", "graph_edges")
    return load_graph(args.graph_stations, args.graph_edges, speed=args.speed)


def _flows(args) -> FlowStore:
    _need(args, "flows")
    return ingest_flows(args.flows)


def _profiles(args, store: FlowStore):
    if getattr(args, "profiles", None):
        return read_profiles(args.profiles, store.grid)
    train = args.train if args.train is not None else store.dates()
    return compute_profiles(store, train)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_simulate(args) -> int:
    _need(args, "scenario", "out")
    path = Path(args.scenario)
    if not path.is_file():
        raise UsageError(f"scenario file not found: {path}")
    graph = _graph(args) if args.graph_stations or args.graph_edges else None
    scenario, anomalies = load_scenario(path, graph)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    if args.days is not None:
        scenario = replace(scenario, days=args.days)
    result = simulate(scenario)
    observed, masks = inject_anomalies(result.store, anomalies)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_flows(observed, out / "flows.csv")
    write_flows(result.clean_store, out / "truth.csv")
    write_masks(masks, out / "mask.csv")
    write_topology(scenario.graph.topology(), out / "stations.csv", out / "edges.csv")
    _say(f"simulated {len(result.log)} vehicles over {scenario.days} days -> {out}")
    return 0


def cmd_clean(args) -> int:
    _need(args, "out")
    store = _flows(args)
    cfg = CleaningConfig(window_w=args.window_w, threshold_k=args.threshold_k, alpha=args.alpha)
    profiles = compute_profiles(store, args.train if args.train is not None else store.dates())
    cleaned, masks = clean_store(store, profiles, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_flows(cleaned, out / "flows.csv")
    write_masks(masks, out / "mask.csv")
    flagged = sum(m.flagged.size for m in masks)
    _say(f"flagged {flagged} intervals in {len(masks)} series -> {out}")
    return 0


def cmd_profile(args) -> int:
    _need(args, "out")
    store = _flows(args)
    write_profiles(_profiles(args, store), args.out)
    return 0


def cmd_predict(args) -> int:
    _need(args, "method", "out")
    method = Method.parse(args.method)
    r = args.r if args.r is not None else 1
    p = args.p if args.p is not None else 1
    g = _graph(args)
    store = _flows(args)
    profiles = _profiles(args, store)
    targets = list(args.station) if args.station else list(g.mainline)
    for s in targets:
        if not g.is_mainline(s):
            raise UsageError(f"{s!r} is not a mainline station")
    if method is Method.DPP:
        feasible = set(targets)
    else:
        feasible = feasible_targets(g, r, p) & set(targets)
    infeasible = [s for s in targets if s not in feasible]

    timeline = FlowTimeline(store, profiles)
    if args.at is not None:
        idx = np.array([timeline.index_of(args.at) + p])
    else:
        days = args.test if args.test is not None else store.dates()
        idx = timeline.day_indices(days)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report = out.with_name(out.stem + "_infeasible.csv")
    with open(report, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station_id", "r", "p", "reason"])
        for s in infeasible:
            w.writerow([s, r, p, "no upstream station at the required distance"])
    if not feasible:
        raise NoFeasibleStations(f"no feasible target for r={r}, p={p}; see {report}")

    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for s in targets:
            if s not in feasible:
                continue
            values = forecast_series(g, timeline, method, s, r, p, idx)
            for i, v in zip(idx, values):
                tp = timeline.time_of(int(i))
                w.writerow([s, tp.day.isoformat(), tp.index, method.value.lower(), r, p, format_count(v)])
    if infeasible:
        _say(f"{len(infeasible)} infeasible stations listed in {report}")
    return 0


def cmd_evaluate(args) -> int:
    _need(args, "out", "test")
    g = _graph(args)
    store = _flows(args)
    train = args.train if args.train is not None else tuple(d for d in store.dates() if d not in set(args.test))
    plan = EvaluationPlan(
        train=tuple(train), test=tuple(args.test), stations=args.station,
        methods=args.method or (Method.DPP, Method.BKTR, Method.INTR),
        r_values=args.r or (1,), p_values=args.p or (1,))
    plan.validate()
    args.train = plan.train
    profiles = _profiles(args, store)
    report = run_evaluation(g, store, profiles, plan, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "report.json")
    report.write_boxplot(out / "boxplot.csv")
    _say(f"scored {len(report.cells)} cells -> {out}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "clean": cmd_clean,
    "profile": cmd_profile,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _resolve(args)
        return COMMANDS[args.command](args)
    except (UsageError, MotorwayFlowError, ValueError) as exc:
        _say(f"motorway-flow {args.command}: error: {exc}")
        return 1
    except OSError as exc:
        where = f" {exc.filename}" if exc.filename else ""
        _say(f"motorway-flow {args.command}: error:{where} {exc.strerror or exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
