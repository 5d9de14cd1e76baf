import math

import pytest
from hypothesis import given, settings, strategies as st

from motorway_flow.errors import DanglingEdge, DuplicateStation, Infeasible, InvariantViolation, NoPath
from motorway_flow.graph import (GraphEdge, Station, Topology, align_offset, build_graph,
                                 chain_topology, find_optimal_upstream, path_distance, read_topology,
                                 traverse_collect, write_topology)
from motorway_flow.predictors import feasible_targets
from motorway_flow.simulator import synthetic_topology

from conftest import ENTRY, EXIT, MAIN, edge_walk_distance, worked_topology


def test_worked_example_positions_and_distance(worked):
    assert worked.mainline[0] == "43A" and worked.mainline[-1] == "33A"
    assert path_distance(worked, "43A", "33A") == 18000.0
    assert path_distance(worked, "41E", "33A") == 16500.0
    assert path_distance(worked, "43A", "39X") == 4300.0


def test_worked_example_upstream_and_traversal(worked):
    assert find_optimal_upstream(worked, "33A", 2, 2) == "43A"
    trav = traverse_collect(worked, "43A", "33A", 2)
    assert [(e.station, e.offset) for e in trav.entries] == [("41E", -2), ("38E", -1)]
    assert [(x.station, x.offset) for x in trav.exits] == [("39X", -1)]


def test_unreachable_paths_raise(worked):
    with pytest.raises(NoPath):
        path_distance(worked, "33A", "43A")
    with pytest.raises(NoPath):
        path_distance(worked, "39X", "33A")
    with pytest.raises(NoPath):
        path_distance(worked, "43A", "41E")


def test_build_rejects_bad_topologies():
    base = chain_topology([1000.0, 1000.0])
    with pytest.raises(DuplicateStation):
        build_graph(Topology(base.stations + (Station("M0", MAIN),), base.edges))
    with pytest.raises(DanglingEdge):
        build_graph(Topology(base.stations, base.edges + (GraphEdge("M2", "Q", 5.0),)))
    with pytest.raises(InvariantViolation):
        build_graph(Topology(base.stations, base.edges + (GraphEdge("M2", "M0", 5.0),)))
    with pytest.raises(InvariantViolation):
        build_graph(Topology(base.stations, (GraphEdge("M0", "M1", -1.0), base.edges[1])))
    with pytest.raises(InvariantViolation):
        build_graph(Topology(base.stations + (Station("E", ENTRY),), base.edges))  # ramp not attached


def test_align_offset_rounds_half_up(worked):
    D = worked.interval_distance
    table = {0.0: 0, 0.49 * D: 0, 0.5 * D: 1, 1.49 * D: 1, 1.5 * D: 2, 2.0 * D: 2, -0.2 * D: 0, -0.6 * D: -1}
    for dist, k in table.items():
        assert align_offset(dist, worked, 1) == k - 1


def test_tie_goes_to_farther_upstream():
    # v is M2; M1 sits 2250 m short of 9000 m target, M0 2250 m beyond it
    g = build_graph(chain_topology([4500.0, 6750.0]))
    assert find_optimal_upstream(g, "M2", 1, 1) == "M0"


def test_infeasible_when_nothing_far_enough():
    g = build_graph(chain_topology([1000.0, 1000.0]))
    with pytest.raises(Infeasible):
        find_optimal_upstream(g, "M2", 1, 1)


def test_invalid_horizons_and_targets(worked):
    with pytest.raises(ValueError):
        find_optimal_upstream(worked, "33A", 0, 1)
    with pytest.raises(ValueError):
        find_optimal_upstream(worked, "41E", 1, 1)


def test_topology_csv_round_trip(tmp_path):
    topo = worked_topology()
    write_topology(topo, tmp_path / "s.csv", tmp_path / "e.csv")
    back = read_topology(tmp_path / "s.csv", tmp_path / "e.csv")
    assert back == topo


# ---------------------------------------------------------------- properties

topologies = st.builds(
    synthetic_topology,
    n_mainline=st.integers(3, 25),
    n_entries=st.just(0),
    n_exits=st.just(0),
    spacing=st.sampled_from([4500.0, (500.0, 6000.0), (1500.0, 4500.0)]),
    seed=st.integers(0, 10_000),
).flatmap(lambda t: st.builds(
    lambda ne, nx, seed: synthetic_topology(
        n_mainline=sum(s.kind is MAIN for s in t.stations), n_entries=ne, n_exits=nx,
        spacing=(500.0, 6000.0), ramp_length=(100.0, 900.0), seed=seed),
    st.integers(0, sum(s.kind is MAIN for s in t.stations) - 1),
    st.integers(0, sum(s.kind is MAIN for s in t.stations) - 1),
    st.integers(0, 10_000)))


def brute_force_upstream(g, v, r, p):
    target = (r + p) * g.interval_distance
    cands = []
    for u in g.mainline[:g.mainline_index(v)]:
        dist = edge_walk_distance(g.topology(), u, v)
        if dist >= 0.5 * target:
            cands.append((abs(dist - target), -dist, u))
    return min(cands)[2] if cands else None


@settings(max_examples=60, deadline=None)
@given(topologies, st.integers(1, 5), st.integers(1, 5))
def test_upstream_matches_brute_force(topo, r, p):
    g = build_graph(topo)
    for v in g.mainline:
        expected = brute_force_upstream(g, v, r, p)
        if expected is None:
            with pytest.raises(Infeasible):
                find_optimal_upstream(g, v, r, p)
        else:
            assert find_optimal_upstream(g, v, r, p) == expected


@settings(max_examples=60, deadline=None)
@given(topologies)
def test_path_distance_matches_edge_walk(topo):
    g = build_graph(topo)
    names = list(g.stations)
    for a in names[::3]:
        for b in names[::2]:
            walked = edge_walk_distance(topo, a, b)
            if walked is None:
                with pytest.raises(NoPath):
                    path_distance(g, a, b)
            else:
                assert math.isclose(path_distance(g, a, b), walked, rel_tol=1e-12, abs_tol=1e-9)


@settings(max_examples=60, deadline=None)
@given(topologies, st.integers(1, 5), st.data())
def test_traversal_ramps_are_set_difference(topo, r, data):
    """Entries feeding (u, v] and exits leaving [u, v), from reachability alone."""
    g = build_graph(topo)
    i = data.draw(st.integers(0, len(g.mainline) - 1))
    j = data.draw(st.integers(i, len(g.mainline) - 1))
    u, v = g.mainline[i], g.mainline[j]
    reach_v = {s for s in g.stations if edge_walk_distance(topo, s, v) is not None}
    reach_u = {s for s in g.stations if edge_walk_distance(topo, s, u) is not None}
    from_u = {s for s in g.stations if edge_walk_distance(topo, u, s) is not None}
    from_v = {s for s in g.stations if edge_walk_distance(topo, v, s) is not None}
    want_entries = {s for s in reach_v - reach_u if g.kind(s) is ENTRY}
    want_exits = {s for s in from_u - from_v if g.kind(s) is EXIT}
    trav = traverse_collect(g, u, v, r)
    assert {e.station for e in trav.entries} == want_entries
    assert {x.station for x in trav.exits} == want_exits
    offsets = [a.offset for a in sorted(trav.entries + trav.exits, key=lambda a: a.distance)]
    assert offsets == sorted(offsets)
    for a in trav.entries + trav.exits:
        assert a.offset == math.floor(a.distance / g.interval_distance + 0.5) - r


@settings(max_examples=60, deadline=None)
@given(topologies)
def test_feasible_set_shrinks_with_horizon(topo):
    g = build_graph(topo)
    sets = {(r, p): feasible_targets(g, r, p) for r in range(1, 6) for p in range(1, 6)}
    for (r, p), s in sets.items():
        if r < 5:
            assert sets[(r + 1, p)] <= s
        if p < 5:
            assert sets[(r, p + 1)] <= s
