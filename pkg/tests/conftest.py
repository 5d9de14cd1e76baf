from datetime import date

import numpy as np
import pytest

from motorway_flow.graph import GraphEdge, Station, StationKind, Topology, build_graph

MAIN, ENTRY, EXIT = StationKind.MAINLINE, StationKind.ENTRY, StationKind.EXIT
MONDAY = date(2017, 1, 2)


def worked_topology() -> Topology:
    """43A..33A with gaps of 1 km then 3 km and three ramps near 41A, 39A, 38A."""
    ids = [f"{k}A" for k in range(43, 32, -1)]
    gaps = [1000.0] * 6 + [3000.0] * 4
    stations = [Station(s, MAIN) for s in ids]
    stations += [Station("41E", ENTRY), Station("39X", EXIT), Station("38E", ENTRY)]
    edges = [GraphEdge(a, b, L) for a, b, L in zip(ids, ids[1:], gaps)]
    edges += [GraphEdge("41E", "41A", 500.0), GraphEdge("39A", "39X", 300.0),
              GraphEdge("38E", "38A", 200.0)]
    return Topology(tuple(stations), tuple(edges))


@pytest.fixture
def worked():
    return build_graph(worked_topology())


def edge_walk_distance(topology: Topology, a: str, b: str) -> float | None:
    """Follow out-edges from ``a`` depth-first until ``b``; None if unreachable."""
    out = {}
    for e in topology.edges:
        out.setdefault(e.source, []).append(e)
    stack = [(a, 0.0)]
    while stack:
        node, dist = stack.pop()
        if node == b:
            return dist
        for e in out.get(node, []):
            stack.append((e.target, dist + e.length))
    return None


def constant_rates(n=480, value=10.0):
    return np.full(n, float(value))


# acceptance verdicts, echoed in the terminal summary
VERDICTS: list[str] = []


def record(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    VERDICTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
