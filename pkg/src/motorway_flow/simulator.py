"""Constant-speed vehicle simulator producing ground-truth interval counts.

Vehicles appear at the mainline head and at entry ramps, drive downstream
at the graph's reference speed, may leave at each exit they pass, and are
counted by every detector in the interval containing their crossing time.
All randomness comes from one seeded generator, so a scenario and seed
always reproduce the same counts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cleaning import OUTLIER, OutlierMask
from .errors import InvalidScenario, OutOfRangeSpec
from .flowdata import FlowStore, TimeGrid
from .graph import (DEFAULT_INTERVAL, DEFAULT_SPEED, GraphEdge, MotorwayGraph, Station,
                    StationKind, Topology, build_graph, load_graph)

ARRIVALS = ("deterministic", "poisson")
TIMINGS = ("aligned", "uniform", "random")
DEFAULT_START = date(2017, 1, 2)  # a Monday


# ---------------------------------------------------------------- demand shapes

def _bump(hours: np.ndarray, centre: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((hours - centre) / width) ** 2)


def demand_curve(shape: str, scale: float, intervals_per_day: int = 480) -> np.ndarray:
    """Expected vehicles per interval, one row per weekday (Monday first).

    ``"commute"`` has morning and evening peaks on weekdays and a single
    midday peak at weekends; ``"constant"`` is flat. ``scale`` is the peak.
    """
    hours = (np.arange(intervals_per_day) + 0.5) * 24.0 / intervals_per_day
    if shape == "constant":
        return np.full((7, intervals_per_day), float(scale))
    if shape != "commute":
        raise InvalidScenario(f"unknown demand shape {shape!r}")
    weekday = 0.08 + 0.3 * _bump(hours, 13.0, 3.5) + 0.9 * _bump(hours, 8.75, 1.0) \
        + 0.8 * _bump(hours, 18.25, 1.3)
    weekend = 0.08 + 0.75 * _bump(hours, 13.5, 2.2)
    weekday /= weekday.max()
    weekend *= 0.8 / weekend.max()
    return scale * np.vstack([weekday] * 5 + [weekend] * 2)


# ---------------------------------------------------------------- topology

def synthetic_topology(n_mainline: int = 75, n_entries: int = 20, n_exits: int = 18,
                       spacing: float | tuple[float, float] = 4500.0,
                       ramp_length: float | tuple[float, float] = (200.0, 800.0),
                       seed: int = 0) -> Topology:
    """Synthetic carriageway: mainline ``75A`` (upstream) down to ``01A``.

    Entry ``kE`` feeds ``kA`` and exit ``kX`` leaves ``kA``. Gap and ramp
    lengths are fixed or drawn uniformly (to 10 m) from a ``(lo, hi)`` range.
    """
    if n_mainline < 2 or n_entries > n_mainline - 1 or n_exits > n_mainline - 1:
        raise InvalidScenario("too many ramps for the mainline length")
    rng = np.random.default_rng(seed)

    def draw(spec):
        if isinstance(spec, (int, float)):
            return float(spec)
        lo, hi = spec
        return float(np.round(rng.uniform(lo, hi) / 10.0) * 10.0)

    width = len(str(n_mainline))
    labels = [f"{n_mainline - i:0{max(width, 2)}d}" for i in range(n_mainline)]
    stations = [Station(f"{lab}A", StationKind.MAINLINE) for lab in labels]
    edges = [GraphEdge(f"{a}A", f"{b}A", draw(spacing)) for a, b in zip(labels, labels[1:])]
    entry_at = sorted(rng.choice(np.arange(1, n_mainline), size=n_entries, replace=False))
    exit_at = sorted(rng.choice(np.arange(0, n_mainline - 1), size=n_exits, replace=False))
    for k in entry_at:
        sid = f"{labels[k]}E"
        stations.append(Station(sid, StationKind.ENTRY))
        edges.append(GraphEdge(sid, f"{labels[k]}A", draw(ramp_length)))
    for k in exit_at:
        sid = f"{labels[k]}X"
        stations.append(Station(sid, StationKind.EXIT))
        edges.append(GraphEdge(f"{labels[k]}A", sid, draw(ramp_length)))
    return Topology(tuple(stations), tuple(edges))


# ---------------------------------------------------------------- scenario

@dataclass
class Scenario:
    """Everything needed to generate a dataset.

    ``entry_rates`` maps the mainline head and entry stations to expected
    vehicles per interval, shaped ``(7, intervals_per_day)`` (per weekday) or
    ``(intervals_per_day,)``. Sources without a rate inject nothing.
    ``timing`` places vehicles inside their interval: ``aligned`` releases a
    whole cohort so it crosses mainline reference points mid-interval,
    ``uniform`` spreads it evenly, ``random`` draws uniform times. It
    defaults to ``aligned`` for deterministic and ``random`` for Poisson
    arrivals.
    """

    graph: MotorwayGraph
    days: int
    seed: int = 0
    start: date = DEFAULT_START
    entry_rates: dict[str, np.ndarray] = field(default_factory=dict)
    exit_probs: dict[str, float] = field(default_factory=dict)
    noise_sigma: float = 0.0
    arrivals: str = "deterministic"
    timing: str | None = None
    day_sigma: float = 0.0
    varied: tuple[str, ...] | None = None
    warmup: bool = True

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.from_interval(self.graph.interval)

    @property
    def release(self) -> str:
        if self.timing is not None:
            return self.timing
        return "aligned" if self.arrivals == "deterministic" else "random"

    def sources(self) -> list[str]:
        return [self.graph.mainline[0]] + sorted(self.graph.entries())

    def rate_table(self, station: str) -> np.ndarray:
        n = self.grid.intervals_per_day
        rates = self.entry_rates.get(station)
        if rates is None:
            return np.zeros((7, n))
        rates = np.asarray(rates, dtype=float)
        return np.broadcast_to(rates, (7, n)) if rates.shape == (n,) else rates

    def validate(self) -> None:
        g, n = self.graph, self.grid.intervals_per_day
        if int(self.days) != self.days or self.days < 0:
            raise InvalidScenario("days must be a non-negative integer")
        if self.arrivals not in ARRIVALS:
            raise InvalidScenario(f"arrivals must be one of {ARRIVALS}")
        if self.release not in TIMINGS:
            raise InvalidScenario(f"timing must be one of {TIMINGS}")
        if not (self.noise_sigma >= 0 and self.day_sigma >= 0):
            raise InvalidScenario("noise_sigma and day_sigma must be >= 0")
        valid_sources = set(self.sources())
        for s, rates in self.entry_rates.items():
            if s not in valid_sources:
                raise InvalidScenario(f"{s!r} is neither the mainline head nor an entry")
            rates = np.asarray(rates, dtype=float)
            if rates.shape not in ((n,), (7, n)):
                raise InvalidScenario(f"rates for {s} have shape {rates.shape}")
            if not np.all(np.isfinite(rates)) or np.any(rates < 0):
                raise InvalidScenario(f"rates for {s} must be finite and >= 0")
        for s in self.varied or ():
            if s not in valid_sources:
                raise InvalidScenario(f"varied source {s!r} is neither the head nor an entry")
        for x, prob in self.exit_probs.items():
            if g.stations.get(x) is None or g.kind(x) is not StationKind.EXIT:
                raise InvalidScenario(f"{x!r} is not an exit")
            if not 0.0 <= prob <= 1.0:
                raise InvalidScenario(f"exit probability for {x} outside [0, 1]")


# ---------------------------------------------------------------- vehicle log

@dataclass
class VehicleLog:
    """Every simulated vehicle: source, departure time (s) and exit taken.

    ``junction`` indexes :attr:`exits` (ordered downstream), -1 when the
    vehicle drives past the last station. Crossing times follow from the
    graph positions and the constant speed.
    """

    graph: MotorwayGraph
    sources: tuple[str, ...]
    exits: tuple[str, ...]
    source: np.ndarray
    depart: np.ndarray
    junction: np.ndarray

    def __len__(self) -> int:
        return int(self.depart.shape[0])

    def _merge_index(self) -> np.ndarray:
        g = self.graph
        merge = np.array([g.mainline_index(g.anchor.get(s, s)) for s in self.sources])
        return merge[self.source]

    def _last_index(self) -> np.ndarray:
        g = self.graph
        last_of_exit = np.array([g.mainline_index(g.anchor[x]) for x in self.exits] + [len(g.mainline) - 1])
        return last_of_exit[self.junction]  # -1 picks the appended "through" entry

    def _source_position(self) -> np.ndarray:
        pos = np.array([self.graph.position[s] for s in self.sources])
        return pos[self.source]

    def crossings(self, station: str) -> np.ndarray:
        """Crossing times (s) of every vehicle detected by ``station``."""
        g = self.graph
        kind = g.kind(station)
        if kind is StationKind.ENTRY:
            k = self.sources.index(station) if station in self.sources else -2
            return self.depart[self.source == k]
        if kind is StationKind.EXIT:
            k = self.exits.index(station)
            sel = self.junction == k
        else:
            j = g.mainline_index(station)
            sel = (self._merge_index() <= j) & (self._last_index() >= j)
        return self.depart[sel] + (g.position[station] - self._source_position()[sel]) / g.speed

    def segment_times(self, upstream: str, downstream: str) -> tuple[np.ndarray, np.ndarray]:
        """Times each vehicle enters and leaves the segment between two mainline stations.

        A vehicle enters by crossing ``upstream`` or an entry merging after it
        (up to ``downstream``) and leaves by crossing ``downstream`` or an exit
        before it. Vehicles that never use the segment get NaN.
        """
        g = self.graph
        i1, i2 = g.mainline_index(upstream), g.mainline_index(downstream)
        merge, last = self._merge_index(), self._last_index()
        src_pos = self._source_position()
        is_entry = np.array([g.kind(s) is StationKind.ENTRY for s in self.sources])[self.source]
        via_up = (merge <= i1) & (last >= i1)
        via_ramp = is_entry & (merge > i1) & (merge <= i2)
        enter = np.full(len(self), np.nan)
        enter[via_up] = self.depart[via_up] + (g.position[upstream] - src_pos[via_up]) / g.speed
        enter[via_ramp] = self.depart[via_ramp]
        leave = np.full(len(self), np.nan)
        inside = via_up | via_ramp
        past = inside & (last >= i2)
        leave[past] = self.depart[past] + (g.position[downstream] - src_pos[past]) / g.speed
        out = inside & (last < i2) & (self.junction >= 0)
        exit_pos = np.array([g.position[x] for x in self.exits] + [np.nan])[self.junction]
        leave[out] = self.depart[out] + (exit_pos[out] - src_pos[out]) / g.speed
        return enter, leave

    def in_transit(self, upstream: str, downstream: str, time: float) -> int:
        """Vehicles inside the segment at ``time``: entered before it, leave at or after it."""
        enter, leave = self.segment_times(upstream, downstream)
        return int(np.sum((enter < time) & (leave >= time)))


@dataclass
class SimulationResult:
    store: FlowStore
    log: VehicleLog
    clean_store: FlowStore
    multipliers: dict[date, float]
    scenario: Scenario


# ---------------------------------------------------------------- engine

def _junctions(g: MotorwayGraph) -> tuple[str, ...]:
    return tuple(sorted(g.exits(), key=lambda x: (g.mainline_index(g.anchor[x]), x)))


def _warmup_intervals(g: MotorwayGraph) -> int:
    span = max(g.position.values()) - min(g.position.values())
    return int(math.ceil(span / g.speed / g.interval)) + 1


def _count(log: VehicleLog, total: int) -> dict[str, np.ndarray]:
    """Bin every detector crossing into ``total`` intervals starting at time 0."""
    g = log.graph
    d = g.interval
    counts = {s: np.zeros(total) for s in g.stations}
    if total == 0 or len(log) == 0:
        return counts

    def add(station, times):
        bins = np.floor(times / d).astype(np.int64)
        bins = bins[(bins >= 0) & (bins < total)]
        counts[station] += np.bincount(bins, minlength=total)[:total]

    last_all = log._last_index()
    exit_pos = [g.position[x] for x in log.exits]
    for k, src in enumerate(log.sources):
        sel = log.source == k
        if not np.any(sel):
            continue
        times, last, junction = log.depart[sel], last_all[sel], log.junction[sel]
        p0 = g.position[src]
        if g.kind(src) is StationKind.ENTRY:
            add(src, times)
            start = g.mainline_index(g.anchor[src])
        else:
            start = 0
        order = np.argsort(-last, kind="stable")
        times_by_last, neg_last = times[order], -last[order]
        for j in range(start, len(g.mainline)):
            alive = int(np.searchsorted(neg_last, -j, side="right"))
            if alive == 0:
                break
            m = g.mainline[j]
            add(m, times_by_last[:alive] + (g.position[m] - p0) / g.speed)
        for q in np.unique(junction[junction >= 0]):
            x = log.exits[q]
            add(x, times[junction == q] + (exit_pos[q] - p0) / g.speed)
    return counts


def _exit_choice(u: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Index of the first exit taken for each uniform draw, -1 if none."""
    if probs.size == 0:
        return np.full(u.shape, -1, dtype=np.int64)
    cum = 1.0 - np.cumprod(1.0 - probs)
    k = np.searchsorted(cum, u, side="right")
    return np.where(k >= probs.size, -1, k)


def simulate(scenario: Scenario) -> SimulationResult:
    """Run a scenario and return detector counts plus the vehicle log."""
    scenario.validate()
    g = scenario.graph
    grid = scenario.grid
    n, d = grid.intervals_per_day, grid.interval
    total = scenario.days * n
    warm = _warmup_intervals(g) if scenario.warmup and total > 0 else 0
    demand_rng, noise_rng = (np.random.default_rng(s)
                             for s in np.random.SeedSequence(scenario.seed).spawn(2))

    first_day = -math.ceil(warm / n) if warm else 0
    multipliers = {}
    for k in range(first_day, scenario.days):
        m = 1.0
        if scenario.day_sigma > 0:
            m = max(0.0, float(demand_rng.normal(1.0, scenario.day_sigma)))
        multipliers[scenario.start + timedelta(days=k)] = m

    slots = np.arange(-warm, total)
    day_of_slot = np.floor_divide(slots, n)
    weekday = np.array([(scenario.start + timedelta(days=int(k))).weekday()
                        for k in range(first_day, max(scenario.days, 0))], dtype=int)
    mult = np.array([multipliers[scenario.start + timedelta(days=int(k))]
                     for k in range(first_day, max(scenario.days, 0))])

    junctions = _junctions(g)
    junction_mainline = np.array([g.mainline_index(g.anchor[x]) for x in junctions], dtype=int)
    junction_prob = np.array([scenario.exit_probs.get(x, 0.0) for x in junctions])

    sources = tuple(scenario.sources())
    parts_src, parts_dep, parts_junc = [], [], []
    for k, src in enumerate(sources):
        table = scenario.rate_table(src)
        if total == 0 or not np.any(table):
            continue
        rel = day_of_slot - first_day
        rates = table[weekday[rel], np.mod(slots, n)]
        if scenario.varied is None or src in scenario.varied:
            rates = rates * mult[rel]
        if scenario.arrivals == "deterministic":
            counts = np.diff(np.floor(np.concatenate([[0.0], np.cumsum(rates)]) + 1e-9)).astype(np.int64)
        else:
            counts = demand_rng.poisson(rates)
        size = int(counts.sum())
        if size == 0:
            continue
        slot_of = np.repeat(slots, counts)
        # rank of each vehicle inside its slot cohort
        starts = np.repeat(np.cumsum(counts) - counts, counts)
        rank = np.arange(size) - starts
        cohort = np.repeat(counts, counts)
        if scenario.release == "aligned":
            phase = np.full(size, (d / 2 + g.position[src] / g.speed) % d)
        elif scenario.release == "uniform":
            phase = (rank + 0.5) / cohort * d
        else:
            phase = demand_rng.uniform(0.0, d, size)
        if scenario.arrivals == "deterministic":
            u = (rank + 0.5) / cohort
        else:
            u = demand_rng.random(size)
        merge = g.mainline_index(g.anchor.get(src, src))
        first = int(np.searchsorted(junction_mainline, merge, side="left"))
        choice = _exit_choice(u, junction_prob[first:])
        parts_src.append(np.full(size, k, dtype=np.int32))
        parts_dep.append(slot_of * d + phase)
        parts_junc.append(np.where(choice >= 0, choice + first, -1))

    def cat(parts, dtype):
        return np.concatenate(parts) if parts else np.empty(0, dtype=dtype)

    log = VehicleLog(g, sources, junctions, cat(parts_src, np.int32), cat(parts_dep, float),
                     cat(parts_junc, np.int64))
    counts = _count(log, total)

    clean, noisy = {}, {}
    for station in sorted(counts):
        arr = counts[station]
        if scenario.noise_sigma > 0:
            obs = np.maximum(np.rint(arr + noise_rng.normal(0.0, scenario.noise_sigma, arr.shape)), 0.0)
        else:
            obs = arr
        for day_k in range(scenario.days):
            day = scenario.start + timedelta(days=day_k)
            clean[(station, day)] = arr[day_k * n:(day_k + 1) * n]
            noisy[(station, day)] = obs[day_k * n:(day_k + 1) * n]
    kept = {day: m for day, m in multipliers.items() if day >= scenario.start}
    return SimulationResult(FlowStore(noisy, grid), log, FlowStore(clean, grid), kept, scenario)


@dataclass(frozen=True)
class Vehicle:
    source: str
    depart: float
    exit: str | None = None


def run_vehicles(g: MotorwayGraph, vehicles: Sequence[Vehicle], days: int = 1,
                 start: date = DEFAULT_START) -> FlowStore:
    """Count an explicit list of vehicles, with no warm-up, demand or noise."""
    grid = TimeGrid.from_interval(g.interval)
    sources = tuple([g.mainline[0]] + sorted(g.entries()))
    junctions = _junctions(g)
    src = np.array([sources.index(v.source) for v in vehicles], dtype=np.int32)
    dep = np.array([v.depart for v in vehicles], dtype=float)
    junc = np.array([junctions.index(v.exit) if v.exit else -1 for v in vehicles], dtype=np.int64)
    log = VehicleLog(g, sources, junctions, src, dep, junc)
    counts = _count(log, days * grid.intervals_per_day)
    n = grid.intervals_per_day
    return FlowStore({(s, start + timedelta(days=k)): arr[k * n:(k + 1) * n]
                      for s, arr in counts.items() for k in range(days)}, grid)


# ---------------------------------------------------------------- anomalies

@dataclass(frozen=True)
class Anomaly:
    """Corruption of ``[start, stop)`` on one series.

    A dropout scales counts by ``1 - magnitude`` (magnitude 1 zeroes them);
    a spike multiplies them by ``magnitude``.
    """

    station: str
    day: date
    start: int
    stop: int
    kind: str
    magnitude: float


def inject_anomalies(store: FlowStore, spec: Iterable[Anomaly]) -> tuple[FlowStore, list[OutlierMask]]:
    """Apply anomalies and return the corrupted store with a mask per touched series."""
    n = store.grid.intervals_per_day
    touched: dict[tuple[str, date], np.ndarray] = {}
    flags: dict[tuple[str, date], np.ndarray] = {}
    for a in spec:
        key = (a.station, a.day)
        if key not in store:
            raise OutOfRangeSpec(f"no series for {a.station} on {a.day}")
        if not (0 <= a.start < a.stop <= n):
            raise OutOfRangeSpec(f"interval range [{a.start}, {a.stop}) outside grid")
        if a.kind == "dropout":
            if not 0.0 < a.magnitude <= 1.0:
                raise OutOfRangeSpec("dropout magnitude must lie in (0, 1]")
            factor = 1.0 - a.magnitude
        elif a.kind == "spike":
            if not a.magnitude > 1.0:
                raise OutOfRangeSpec("spike magnitude must exceed 1")
            factor = a.magnitude
        else:
            raise OutOfRangeSpec(f"unknown anomaly kind {a.kind!r}")
        arr = touched.setdefault(key, store.series(*key).copy())
        arr[a.start:a.stop] = arr[a.start:a.stop] * factor
        flags.setdefault(key, np.zeros(n, dtype=np.int8))[a.start:a.stop] = OUTLIER
    masks = [OutlierMask(s, day, f) for (s, day), f in sorted(flags.items())]
    return store.replace(touched), masks


def random_anomalies(store: FlowStore, station: str, day: date, n_dropouts: int = 10,
                     n_spikes: int = 2, window: tuple[int, int] = (240, 340),
                     spike_magnitude: float = 2.5, seed: int = 0) -> list[Anomaly]:
    """Single-interval dropouts and spikes at distinct slots inside ``window``.

    The default window is 12:00 to 17:00 on the 3-minute grid.
    """
    rng = np.random.default_rng(seed)
    lo, hi = window
    slots = rng.choice(np.arange(lo, hi), size=n_dropouts + n_spikes, replace=False)
    out = [Anomaly(station, day, int(s), int(s) + 1, "dropout", 1.0) for s in slots[:n_dropouts]]
    out += [Anomaly(station, day, int(s), int(s) + 1, "spike", spike_magnitude)
            for s in slots[n_dropouts:]]
    return sorted(out, key=lambda a: a.start)


# ---------------------------------------------------------------- scenario files

def _rates_from_spec(spec, n: int) -> np.ndarray:
    if "rates" in spec:
        return np.asarray(spec["rates"], dtype=float)
    return demand_curve(spec.get("shape", "commute"), float(spec.get("scale", 0.0)), n)


def scenario_from_dict(cfg: Mapping, base_dir: str | Path = ".",
                       graph: MotorwayGraph | None = None) -> tuple[Scenario, list[Anomaly]]:
    """Build a scenario from its JSON form. See the README for the schema."""
    base = Path(base_dir)
    try:
        speed = float(cfg.get("speed", DEFAULT_SPEED))
        interval = float(cfg.get("interval", DEFAULT_INTERVAL))
        if graph is None:
            gspec = cfg.get("graph")
            if gspec is None:
                raise InvalidScenario("scenario has no graph")
            if "synthetic" in gspec:
                syn = dict(gspec["synthetic"])
                for key in ("spacing", "ramp_length"):
                    if isinstance(syn.get(key), list):
                        syn[key] = tuple(syn[key])
                graph = build_graph(synthetic_topology(**syn), speed, interval)
            else:
                graph = load_graph(base / gspec["stations"], base / gspec["edges"], speed, interval)
        n = TimeGrid.from_interval(graph.interval).intervals_per_day
        demand = cfg.get("demand", {})
        rates = {}
        if "head" in demand:
            rates[graph.mainline[0]] = _rates_from_spec(demand["head"], n)
        if "entries" in demand:
            for e in graph.entries():
                rates[e] = _rates_from_spec(demand["entries"], n)
        for s, spec in demand.get("stations", {}).items():
            rates[s] = _rates_from_spec(spec, n)
        probs_cfg = cfg.get("exit_probs", {})
        probs = {}
        if "default" in probs_cfg:
            probs = {x: float(probs_cfg["default"]) for x in graph.exits()}
        probs.update({k: float(v) for k, v in probs_cfg.items() if k != "default"})
        scenario = Scenario(
            graph=graph,
            days=int(cfg.get("days", 7)),
            seed=int(cfg.get("seed", 0)),
            start=date.fromisoformat(cfg.get("start_date", DEFAULT_START.isoformat())),
            entry_rates=rates,
            exit_probs=probs,
            noise_sigma=float(cfg.get("noise_sigma", 0.0)),
            arrivals=cfg.get("arrivals", "deterministic"),
            timing=cfg.get("timing"),
            day_sigma=float(cfg.get("day_sigma", 0.0)),
            varied=tuple(cfg["varied"]) if cfg.get("varied") is not None else None,
            warmup=bool(cfg.get("warmup", True)),
        )
        anomalies = [Anomaly(a["station"], date.fromisoformat(a["date"]), int(a["start"]),
                             int(a["stop"]), a["kind"], float(a["magnitude"]))
                     for a in cfg.get("anomalies", [])]
    except InvalidScenario:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidScenario(f"bad scenario: {exc}") from None
    scenario.validate()
    return scenario, anomalies


def load_scenario(path: str | Path, graph: MotorwayGraph | None = None) -> tuple[Scenario, list[Anomaly]]:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidScenario(f"{path}: {exc}") from None
    return scenario_from_dict(cfg, path.parent, graph)
