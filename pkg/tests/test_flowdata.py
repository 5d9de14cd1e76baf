import io
import math
from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motorway_flow.errors import (DuplicateObservation, InsufficientData, IntervalOutOfRange,
                                  MalformedRow, MissingData, PreconditionViolated)
from motorway_flow.flowdata import (FlowStore, TimeGrid, TimePoint, blend, compute_daily_profile,
                                    flows_to_text, ingest_flows, interpolate_flow, read_profiles,
                                    write_profiles, compute_profiles)

from conftest import MONDAY

HEADER = "station_id,date,interval_index,count\n"


def ingest(text):
    return ingest_flows(io.StringIO(text))


def test_ingest_basic_and_missing_cells():
    store = ingest(HEADER + "A,2017-01-02,0,5\nA,2017-01-02,2,\n")
    arr = store.series("A", MONDAY)
    assert arr[0] == 5 and math.isnan(arr[1]) and math.isnan(arr[2])


def test_ingest_errors():
    with pytest.raises(MalformedRow):
        ingest("station,date,idx,count\n")
    with pytest.raises(MalformedRow):
        ingest(HEADER + "A,2017-13-02,0,5\n")
    with pytest.raises(MalformedRow):
        ingest(HEADER + "A,2017-01-02,0,-1\n")
    with pytest.raises(IntervalOutOfRange):
        ingest(HEADER + "A,2017-01-02,480,1\n")
    with pytest.raises(DuplicateObservation):
        ingest(HEADER + "A,2017-01-02,3,1\nA,2017-01-02,3,2\n")


def test_empty_file_is_empty_store():
    assert len(ingest("")) == 0
    assert len(ingest(HEADER)) == 0


def test_value_reads_across_midnight():
    n = 480
    store = FlowStore({("A", MONDAY): np.arange(n), ("A", MONDAY + timedelta(1)): np.arange(n) + 1000})
    assert store.value("A", MONDAY, n + 2) == 1002
    assert store.value("A", MONDAY + timedelta(1), -1) == n - 1
    assert math.isnan(store.value("A", MONDAY, -1))


counts = st.lists(st.one_of(st.integers(0, 5000).map(float), st.just(math.nan),
                            st.floats(0, 1e4, allow_nan=False).map(lambda x: round(x, 3))),
                  min_size=480, max_size=480)


@settings(max_examples=30, deadline=None)
@given(st.dictionaries(st.tuples(st.sampled_from(["01A", "02A", "07E"]), st.integers(0, 9)),
                       counts, max_size=4))
def test_write_then_ingest_round_trips(raw):
    store = FlowStore({(s, MONDAY + timedelta(k)): np.array(v) for (s, k), v in raw.items()})
    buf = io.StringIO(flows_to_text(store))
    back = ingest_flows(buf)
    # series that were entirely NaN still round-trip because every row is written
    assert back == store


def test_profile_is_weekday_mean():
    days = [MONDAY + timedelta(k) for k in range(14)]
    rng = np.random.default_rng(0)
    data = {("A", d): rng.integers(0, 100, 480).astype(float) for d in days}
    data[("A", days[7])][5] = np.nan
    prof = compute_daily_profile(FlowStore(data), "A", days)
    for wd in range(7):
        rows = [data[("A", d)] for d in days if d.weekday() == wd]
        expected = np.nanmean(np.vstack(rows), axis=0)
        assert np.array_equal(prof.means[wd], expected)
    assert prof.means[0, 5] == data[("A", days[0])][5]


def test_profile_needs_every_weekday():
    days = [MONDAY + timedelta(k) for k in range(6)]
    store = FlowStore({("A", d): np.ones(480) for d in days})
    with pytest.raises(InsufficientData):
        compute_daily_profile(store, "A", days)


def test_profile_csv_round_trip(tmp_path):
    days = [MONDAY + timedelta(k) for k in range(7)]
    store = FlowStore({(s, d): np.random.default_rng(k).random(480) * 50
                       for k, (s, d) in enumerate((s, d) for s in "AB" for d in days)})
    profiles = compute_profiles(store, days)
    write_profiles(profiles, tmp_path / "p.csv")
    back = read_profiles(tmp_path / "p.csv")
    assert set(back) == {"A", "B"}
    for s in back:
        assert np.array_equal(back[s].means, profiles[s].means)


def test_blend_degenerate_and_midpoint():
    assert blend(7.0, math.nan, 180.0, 0.0, 180.0) == 7.0
    assert blend(math.nan, 9.0, 0.0, 180.0, 180.0) == 9.0
    assert blend(4.0, 10.0, 90.0, 90.0, 180.0) == 7.0
    with pytest.raises(PreconditionViolated):
        blend(1.0, 2.0, 100.0, 100.0, 180.0)
    with pytest.raises(PreconditionViolated):
        blend(1.0, 2.0, -1.0, 181.0, 180.0)


@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0, 180))
def test_blend_lies_between_its_inputs(a, b, t1):
    v = blend(a, b, t1, 180.0 - t1, 180.0)
    assert min(a, b) - 1e-9 * max(a, b, 1) <= v <= max(a, b) + 1e-9 * max(a, b, 1)


def test_interpolate_flow_reads_the_next_day():
    store = FlowStore({("A", MONDAY): np.full(480, 10.0), ("A", MONDAY + timedelta(1)): np.full(480, 20.0)})
    assert interpolate_flow(store, "A", MONDAY, 479, 60.0, 120.0) == (60 * 10 + 120 * 20) / 180
    with pytest.raises(MissingData):
        interpolate_flow(store, "A", MONDAY + timedelta(1), 479, 90.0, 90.0)


def test_timepoint_normalisation():
    assert TimePoint(MONDAY, 481).normalized(480) == TimePoint(MONDAY + timedelta(1), 1)
    assert TimePoint(MONDAY, -1).normalized(480) == TimePoint(MONDAY - timedelta(1), 479)
    assert TimeGrid.from_interval(300).intervals_per_day == 288
    with pytest.raises(ValueError):
        TimeGrid(180.0, 400)
