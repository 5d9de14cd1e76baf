"""Directed station graph of a single motorway carriageway.

Mainline stations form one chain from the upstream head to the downstream
tail. On-ramp (entry) stations feed a mainline station through a single
edge and off-ramp (exit) stations are fed by one. Every station gets a
coordinate along the chain so travel distances reduce to subtraction.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import (DanglingEdge, DuplicateStation, Infeasible, InvariantViolation,
                     MalformedRow, NoPath)

DEFAULT_SPEED = 25.0  # m/s, i.e. 90 km/h
DEFAULT_INTERVAL = 180.0  # seconds


class StationKind(str, Enum):
    MAINLINE = "mainline"
    ENTRY = "entry"
    EXIT = "exit"


@dataclass(frozen=True)
class Station:
    id: str
    kind: StationKind


@dataclass(frozen=True)
class GraphEdge:
    source: str
    target: str
    length: float


@dataclass(frozen=True)
class Topology:
    """Raw station and edge lists, as read from the topology CSV pair."""

    stations: tuple[Station, ...]
    edges: tuple[GraphEdge, ...]


@dataclass(frozen=True)
class RampAlignment:
    station: str
    offset: int
    distance: float


@dataclass(frozen=True)
class TraversalResult:
    """Ramps met while travelling from ``origin`` to ``target``.

    ``entries`` and ``exits`` are ordered by distance from the origin;
    ``offset`` is the interval, relative to the current time, at which a
    vehicle that left the origin ``r`` intervals ago passes the ramp.
    """

    origin: str
    target: str
    entries: tuple[RampAlignment, ...]
    exits: tuple[RampAlignment, ...]
    distances: dict[str, float] = field(default_factory=dict)


class MotorwayGraph:
    """Validated, immutable station graph. Build it with :func:`build_graph`."""

    def __init__(self, stations, edges, mainline, position, anchor, ramp_length,
                 speed, interval):
        self.stations: dict[str, Station] = stations
        self.edges: tuple[GraphEdge, ...] = edges
        self.mainline: tuple[str, ...] = mainline
        self.position: dict[str, float] = position
        self.anchor: dict[str, str] = anchor
        self.ramp_length: dict[str, float] = ramp_length
        self.speed = float(speed)
        self.interval = float(interval)
        self._index = {s: i for i, s in enumerate(mainline)}
        entries = {m: [] for m in mainline}
        exits = {m: [] for m in mainline}
        for ramp, m in sorted(anchor.items()):
            if stations[ramp].kind is StationKind.ENTRY:
                entries[m].append(ramp)
            else:
                exits[m].append(ramp)
        self.entries_into = {m: tuple(v) for m, v in entries.items()}
        self.exits_from = {m: tuple(v) for m, v in exits.items()}

    def __repr__(self) -> str:
        return (f"MotorwayGraph({len(self.mainline)} mainline, "
                f"{sum(len(v) for v in self.entries_into.values())} entries, "
                f"{sum(len(v) for v in self.exits_from.values())} exits)")

    @property
    def interval_distance(self) -> float:
        """Metres covered in one interval at the reference speed."""
        return self.interval * self.speed

    def kind(self, station: str) -> StationKind:
        try:
            return self.stations[station].kind
        except KeyError:
            raise NoPath(f"unknown station {station!r}") from None

    def mainline_index(self, station: str) -> int:
        try:
            return self._index[station]
        except KeyError:
            raise NoPath(f"{station!r} is not a mainline station") from None

    def is_mainline(self, station: str) -> bool:
        return station in self._index

    def entries(self) -> list[str]:
        return [s for s, st in self.stations.items() if st.kind is StationKind.ENTRY]

    def exits(self) -> list[str]:
        return [s for s, st in self.stations.items() if st.kind is StationKind.EXIT]

    def topology(self) -> Topology:
        return Topology(tuple(self.stations.values()), self.edges)


def build_graph(topology: Topology, speed: float = DEFAULT_SPEED,
                interval: float = DEFAULT_INTERVAL) -> MotorwayGraph:
    """Validate a topology and return the corresponding graph.

    Raises:
        DuplicateStation: a station id is declared twice.
        DanglingEdge: an edge endpoint is not declared.
        InvariantViolation: any structural rule is broken (two ramp
            endpoints, branching or cyclic mainline, misconnected ramps,
            non-positive lengths).
    """
    if not speed > 0 or not interval > 0:
        raise InvariantViolation("speed and interval must be positive")

    stations: dict[str, Station] = {}
    for st in topology.stations:
        if not st.id:
            raise InvariantViolation("empty station id")
        if st.id in stations:
            raise DuplicateStation(st.id)
        stations[st.id] = Station(st.id, StationKind(st.kind))

    out_edges: dict[str, list[GraphEdge]] = {s: [] for s in stations}
    in_edges: dict[str, list[GraphEdge]] = {s: [] for s in stations}
    seen = set()
    for e in topology.edges:
        for end in (e.source, e.target):
            if end not in stations:
                raise DanglingEdge(f"{e.source}->{e.target}: {end!r} not declared")
        if e.source == e.target:
            raise InvariantViolation(f"self loop at {e.source}")
        if not (e.length > 0 and math.isfinite(e.length)):
            raise InvariantViolation(f"edge {e.source}->{e.target} has length {e.length}")
        if (e.source, e.target) in seen:
            raise InvariantViolation(f"duplicate edge {e.source}->{e.target}")
        seen.add((e.source, e.target))
        kinds = (stations[e.source].kind, stations[e.target].kind)
        if StationKind.MAINLINE not in kinds:
            raise InvariantViolation(f"edge {e.source}->{e.target} has no mainline endpoint")
        out_edges[e.source].append(e)
        in_edges[e.target].append(e)

    anchor: dict[str, str] = {}
    ramp_length: dict[str, float] = {}
    for sid, st in stations.items():
        if st.kind is StationKind.ENTRY:
            if in_edges[sid] or len(out_edges[sid]) != 1:
                raise InvariantViolation(f"entry {sid} needs exactly one outgoing and no incoming edge")
            e = out_edges[sid][0]
            if stations[e.target].kind is not StationKind.MAINLINE:
                raise InvariantViolation(f"entry {sid} must feed a mainline station")
            anchor[sid], ramp_length[sid] = e.target, e.length
        elif st.kind is StationKind.EXIT:
            if out_edges[sid] or len(in_edges[sid]) != 1:
                raise InvariantViolation(f"exit {sid} needs exactly one incoming and no outgoing edge")
            e = in_edges[sid][0]
            if stations[e.source].kind is not StationKind.MAINLINE:
                raise InvariantViolation(f"exit {sid} must be fed by a mainline station")
            anchor[sid], ramp_length[sid] = e.source, e.length

    main_next: dict[str, GraphEdge] = {}
    main_prev: dict[str, GraphEdge] = {}
    for sid, st in stations.items():
        if st.kind is not StationKind.MAINLINE:
            continue
        nxt = [e for e in out_edges[sid] if stations[e.target].kind is StationKind.MAINLINE]
        prv = [e for e in in_edges[sid] if stations[e.source].kind is StationKind.MAINLINE]
        if len(nxt) > 1 or len(prv) > 1:
            raise InvariantViolation(f"mainline branches at {sid}")
        if nxt:
            main_next[sid] = nxt[0]
        if prv:
            main_prev[sid] = prv[0]

    main_ids = [s for s, st in stations.items() if st.kind is StationKind.MAINLINE]
    if len(main_ids) < 2:
        raise InvariantViolation("a motorway needs at least two mainline stations")
    heads = [s for s in main_ids if s not in main_prev]
    if len(heads) != 1:
        raise InvariantViolation(f"mainline must be a single chain, found {len(heads)} heads")

    chain = [heads[0]]
    position = {heads[0]: 0.0}
    while chain[-1] in main_next:
        e = main_next[chain[-1]]
        if e.target in position:
            raise InvariantViolation(f"cycle through {e.target}")
        position[e.target] = position[chain[-1]] + e.length
        chain.append(e.target)
    if len(chain) != len(main_ids):
        raise InvariantViolation("mainline is disconnected or contains a cycle")

    for ramp, m in anchor.items():
        if stations[ramp].kind is StationKind.ENTRY:
            position[ramp] = position[m] - ramp_length[ramp]
        else:
            position[ramp] = position[m] + ramp_length[ramp]

    return MotorwayGraph(stations, tuple(topology.edges), tuple(chain), position,
                         anchor, ramp_length, speed, interval)


def _reachable(g: MotorwayGraph, a: str, b: str) -> bool:
    ka, kb = g.kind(a), g.kind(b)
    if a == b:
        return True
    if ka is StationKind.EXIT or kb is StationKind.ENTRY:
        return False
    start = g.mainline_index(g.anchor[a] if ka is StationKind.ENTRY else a)
    if kb is StationKind.MAINLINE:
        return g.mainline_index(b) >= start
    return g.mainline_index(g.anchor[b]) >= start


def path_distance(g: MotorwayGraph, a: str, b: str) -> float:
    """Length in metres of the (unique) directed path from ``a`` to ``b``."""
    if not _reachable(g, a, b):
        raise NoPath(f"no path {a} -> {b}")
    if a == b:
        return 0.0
    return g.position[b] - g.position[a]


def optimal_distance(g: MotorwayGraph, r: int, p: int) -> float:
    return (r + p) * g.interval * g.speed


def find_optimal_upstream(g: MotorwayGraph, v: str, r: int, p: int) -> str:
    """Mainline station upstream of ``v`` closest to ``(r+p)`` intervals of travel.

    Only stations at least half the optimal distance away qualify; ties go
    to the farther-upstream station.
    """
    if r < 1 or p < 1:
        raise ValueError("r and p must be >= 1")
    if g.kind(v) is not StationKind.MAINLINE:
        raise ValueError(f"target {v!r} is not a mainline station")
    target = optimal_distance(g, r, p)
    idx = g.mainline_index(v)
    best, best_gap = None, math.inf
    # walk upstream so a later equal gap (farther station) wins the tie
    for k in range(idx - 1, -1, -1):
        u = g.mainline[k]
        dist = g.position[v] - g.position[u]
        if dist < 0.5 * target:
            continue
        gap = abs(dist - target)
        if gap <= best_gap:
            best, best_gap = u, gap
        elif dist > target:
            break
    if best is None:
        raise Infeasible(f"no upstream station of {v} reaches {0.5 * target:.0f} m")
    return best


def align_offset(dist_from_u: float, g: MotorwayGraph, r: int) -> int:
    """Interval (relative to now) when a vehicle that left u at t-r passes a point.

    Rounds half up, so a point exactly half an interval away counts as the
    later interval.
    """
    return math.floor(dist_from_u / g.interval_distance + 0.5) - r


def traverse_collect(g: MotorwayGraph, u: str, v: str, r: int) -> TraversalResult:
    """Collect the entries and exits a vehicle can use between ``u`` and ``v``.

    Entries merging into any mainline station after ``u`` up to and
    including ``v`` add vehicles that ``v`` counts; exits leaving any
    mainline station from ``u`` up to but excluding ``v`` remove vehicles
    that ``u`` counted.
    """
    if not (g.is_mainline(u) and g.is_mainline(v)) or g.mainline_index(u) > g.mainline_index(v):
        raise NoPath(f"no mainline path {u} -> {v}")
    entries: list[RampAlignment] = []
    exits: list[RampAlignment] = []
    distances = {u: 0.0}
    origin = g.position[u]
    queue = deque([u])
    while queue:
        head = queue.popleft()
        dist = g.position[head] - origin
        distances[head] = dist
        kind = g.kind(head)
        if kind is StationKind.MAINLINE:
            if head != v:
                queue.append(g.mainline[g.mainline_index(head) + 1])
                queue.extend(g.exits_from[head])
            if head != u:
                queue.extend(g.entries_into[head])
            continue
        item = RampAlignment(head, align_offset(dist, g, r), dist)
        (entries if kind is StationKind.ENTRY else exits).append(item)
    entries.sort(key=lambda a: (a.distance, a.station))
    exits.sort(key=lambda a: (a.distance, a.station))
    return TraversalResult(u, v, tuple(entries), tuple(exits), distances)


def read_topology(stations_csv: str | Path, edges_csv: str | Path) -> Topology:
    """Load ``stations.csv`` (id,kind) and ``edges.csv`` (from,to,length_m)."""
    stations = []
    with open(stations_csv, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["id", "kind"]:
            raise MalformedRow(f"{stations_csv}: expected header id,kind")
        for n, row in enumerate(reader, start=2):
            try:
                stations.append(Station(row["id"].strip(), StationKind(row["kind"].strip().lower())))
            except (ValueError, AttributeError) as exc:
                raise MalformedRow(f"{stations_csv}:{n}: {exc}") from None
    edges = []
    with open(edges_csv, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["from", "to", "length_m"]:
            raise MalformedRow(f"{edges_csv}: expected header from,to,length_m")
        for n, row in enumerate(reader, start=2):
            try:
                edges.append(GraphEdge(row["from"].strip(), row["to"].strip(), float(row["length_m"])))
            except (ValueError, TypeError, AttributeError) as exc:
                raise MalformedRow(f"{edges_csv}:{n}: {exc}") from None
    return Topology(tuple(stations), tuple(edges))


def write_topology(topology: Topology, stations_csv: str | Path, edges_csv: str | Path) -> None:
    with open(stations_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "kind"])
        for st in topology.stations:
            w.writerow([st.id, st.kind.value])
    with open(edges_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from", "to", "length_m"])
        for e in topology.edges:
            w.writerow([e.source, e.target, repr(float(e.length))])


def load_graph(stations_csv, edges_csv, speed: float = DEFAULT_SPEED,
               interval: float = DEFAULT_INTERVAL) -> MotorwayGraph:
    return build_graph(read_topology(stations_csv, edges_csv), speed, interval)


def chain_topology(lengths: Iterable[float], prefix: str = "M") -> Topology:
    """Plain mainline chain ``M0 -> M1 -> ...`` with the given gap lengths."""
    lengths = list(lengths)
    ids = [f"{prefix}{i}" for i in range(len(lengths) + 1)]
    stations = tuple(Station(s, StationKind.MAINLINE) for s in ids)
    edges = tuple(GraphEdge(a, b, float(L)) for a, b, L in zip(ids, ids[1:], lengths))
    return Topology(stations, edges)
