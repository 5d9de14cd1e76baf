import csv
import json
import subprocess
import sys
from datetime import date

import numpy as np
import pytest

from motorway_flow.cleaning import read_masks
from motorway_flow.cli import main
from motorway_flow.flowdata import compute_profiles, ingest_flows, read_profiles
from motorway_flow.graph import load_graph
from motorway_flow.predictors import Method, feasible_targets

SMALL = {
    "graph": {"synthetic": {"n_mainline": 12, "n_entries": 4, "n_exits": 4, "spacing": 4500.0,
                            "ramp_length": [200, 800], "seed": 5}},
    "days": 14,
    "seed": 3,
    "demand": {"head": {"shape": "constant", "scale": 40}, "entries": {"shape": "constant", "scale": 6}},
    "exit_probs": {"default": 0.1},
}
TRAIN, TEST = "2017-01-02..2017-01-08", "2017-01-09..2017-01-15"


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    (root / "scenario.json").write_text(json.dumps(SMALL))
    assert main(["simulate", "--scenario", str(root / "scenario.json"), "--out", str(root / "out")]) == 0
    return root / "out"


def graph_args(d):
    return ["--graph-stations", str(d / "stations.csv"), "--graph-edges", str(d / "edges.csv"),
            "--flows", str(d / "flows.csv")]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_outputs_are_readable_and_reproducible(sim, tmp_path):
    store = ingest_flows(sim / "flows.csv")
    g = load_graph(sim / "stations.csv", sim / "edges.csv")
    assert set(store.stations()) == set(g.stations) and len(store.dates()) == 14
    (tmp_path / "s.json").write_text(json.dumps(SMALL))
    assert main(["simulate", "--scenario", str(tmp_path / "s.json"), "--out", str(tmp_path / "again")]) == 0
    for name in ("flows.csv", "truth.csv", "mask.csv", "stations.csv", "edges.csv"):
        assert (sim / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_missing_scenario_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["simulate", "--scenario", str(missing), "--out", str(tmp_path / "o")]) != 0
    assert str(missing) in capsys.readouterr().err


def test_zero_days_gives_header_only(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps(SMALL))
    assert main(["simulate", "--scenario", str(tmp_path / "s.json"), "--days", "0",
                 "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "flows.csv").read_text() == "station_id,date,interval_index,count\n"


def test_clean_leaves_clean_input_alone(sim, tmp_path):
    assert main(["clean", "--flows", str(sim / "flows.csv"), "--out", str(tmp_path)]) == 0
    assert ingest_flows(tmp_path / "flows.csv") == ingest_flows(sim / "flows.csv")
    assert read_masks(tmp_path / "mask.csv") == {}


def test_clean_flags_injected_anomalies(tmp_path):
    cfg = dict(SMALL, anomalies=[{"station": "06A", "date": "2017-01-10", "start": 100, "stop": 103,
                                  "kind": "dropout", "magnitude": 1.0}])
    (tmp_path / "s.json").write_text(json.dumps(cfg))
    assert main(["simulate", "--scenario", str(tmp_path / "s.json"), "--out", str(tmp_path / "sim")]) == 0
    assert main(["clean", "--flows", str(tmp_path / "sim" / "flows.csv"), "--out", str(tmp_path / "c"),
                 "--train", TRAIN]) == 0
    rows = read_rows(tmp_path / "c" / "mask.csv")
    assert {(r["station_id"], r["interval_index"]) for r in rows} >= {("06A", "100"), ("06A", "101"),
                                                                      ("06A", "102")}


def test_threshold_zero_rejected(sim, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["clean", "--flows", str(sim / "flows.csv"), "--out", str(tmp_path), "--threshold-k", "0"])
    assert exc.value.code != 0


def test_p_outside_range_rejected(sim, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["predict", *graph_args(sim), "--method", "bktr", "--p", "6", "--out", str(tmp_path / "p.csv")])
    assert exc.value.code != 0


def test_predict_dpp_single_row(sim, tmp_path):
    out = tmp_path / "p.csv"
    assert main(["predict", *graph_args(sim), "--method", "dpp", "--station", "05A",
                 "--at", "2017-01-10:200", "--p", "2", "--train", TRAIN, "--out", str(out)]) == 0
    rows = read_rows(out)
    assert len(rows) == 1 and rows[0]["interval_index"] == "202"
    store = ingest_flows(sim / "flows.csv")
    prof = compute_profiles(store, [d for d in store.dates() if d.isoformat() <= "2017-01-08"])
    assert float(rows[0]["value"]) == prof["05A"].means[1, 202]


def test_predict_bktr_reproduces_actual_flows(sim, tmp_path):
    out = tmp_path / "p.csv"
    assert main(["predict", *graph_args(sim), "--method", "bktr", "--r", "1", "--p", "1",
                 "--test", "2017-01-11", "--out", str(out)]) == 0
    store = ingest_flows(sim / "flows.csv")
    rows = read_rows(out)
    assert rows
    for row in rows:
        actual = store.value(row["station_id"], date.fromisoformat(row["date"]), int(row["interval_index"]))
        assert float(row["value"]) == actual
    infeasible = read_rows(tmp_path / "p_infeasible.csv")
    g = load_graph(sim / "stations.csv", sim / "edges.csv")
    assert {r["station_id"] for r in infeasible} == set(g.mainline) - feasible_targets(g, 1, 1)


def test_predict_fails_without_feasible_targets(sim, tmp_path, capsys):
    g = load_graph(sim / "stations.csv", sim / "edges.csv")
    assert main(["predict", *graph_args(sim), "--method", "bktr", "--r", "5", "--p", "5",
                 "--station", g.mainline[1], "--out", str(tmp_path / "p.csv")]) != 0
    assert "feasible" in capsys.readouterr().err


def test_evaluate_sweep_counts_and_zero_error(sim, tmp_path):
    assert main(["evaluate", *graph_args(sim), "--train", TRAIN, "--test", TEST, "--r", "1..5",
                 "--p", "1..5", "--out", str(tmp_path), "--jobs", "2"]) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    g = load_graph(sim / "stations.csv", sim / "edges.csv")
    for m in Method:
        for station, cells in doc[m.value].items():
            expected = {f"{r},{p}" for r in range(1, 6) for p in range(1, 6)
                        if station in feasible_targets(g, r, p)}
            assert set(cells) == expected
            assert all(c["rmse"] == 0.0 for c in cells.values())
    full = [s for s in g.mainline if s in feasible_targets(g, 5, 5)]
    assert full and all(len(doc["BKTR"][s]) == 25 for s in full)
    rows = read_rows(tmp_path / "boxplot.csv")
    assert len(rows) == sum(len(c) for m in Method for c in doc[m.value].values())


def test_evaluate_rejects_overlap_and_empty_test(sim, tmp_path, capsys):
    assert main(["evaluate", *graph_args(sim), "--train", TRAIN, "--test", "2017-01-08..2017-01-09",
                 "--out", str(tmp_path)]) != 0
    assert "overlap" in capsys.readouterr().err
    assert main(["evaluate", *graph_args(sim), "--train", TRAIN, "--test", "2018-01-01",
                 "--out", str(tmp_path)]) != 0


def test_config_file_with_flag_override(sim, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": TRAIN, "test": TEST, "r": "1..2", "p": "1", "method": "bktr"}))
    assert main(["evaluate", *graph_args(sim), "--config", str(cfg), "--p", "2",
                 "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "report.json").read_text())
    assert set(doc["aggregate"]) == {"BKTR"} and set(doc["aggregate"]["BKTR"]) == {"1,2", "2,2"}


def test_profile_round_trips(sim, tmp_path):
    assert main(["profile", "--flows", str(sim / "flows.csv"), "--train", TRAIN,
                 "--out", str(tmp_path / "p.csv")]) == 0
    prof = read_profiles(tmp_path / "p.csv")
    store = ingest_flows(sim / "flows.csv")
    assert np.array_equal(prof["03A"].means, compute_profiles(store, store.dates()[:7])["03A"].means)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "motorway_flow", "predict", "--p", "9"],
                         capture_output=True, text=True)
    assert res.returncode == 2 and "outside 1..5" in res.stderr and res.stdout == ""
