import json
import math

import numpy as np
import pytest

from relurepair.cli import run
from relurepair.data import make_dataset, save_dataset
from relurepair.network import (IntervalBox, forward_batch, load_network,
                                random_network, save_network)
from relurepair.predicate import build_halfspace, save_predicate
from relurepair.repair import sample_box


@pytest.fixture
def workspace(tmp_path):
    """Tiny trained-ish setup: net, dataset and predicate files on disk."""
    net = random_network([2, 3, 2], seed=1)
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, size=(8, 2))
    data = make_dataset(X, forward_batch(net, X) + 0.8, [True] * 8)
    paths = {
        "net": tmp_path / "net.json",
        "data": tmp_path / "data.csv",
        "pred": tmp_path / "pred.json",
        "out": tmp_path / "repaired.json",
        "report": tmp_path / "report.json",
    }
    save_network(net, paths["net"])
    save_dataset(data, paths["data"])
    save_predicate(build_halfspace([1.0, 0.0], "<=", 0.0), paths["pred"])
    return paths


def test_train_and_eval_round_trip(tmp_path, capsys):
    data = sample_box(IntervalBox(np.array([-1.0]), np.array([1.0])), 60, 0,
                      lambda x: 2.0 * x)
    data_path = tmp_path / "line.csv"
    save_dataset(data, data_path)
    net_path = tmp_path / "net.json"
    code = run(["train", "--data", str(data_path), "--arch", "1,6,1",
                "--out", str(net_path), "--seed", "3", "--epochs", "150",
                "--lr", "0.05"])
    assert code == 0
    capsys.readouterr()  # drain the train command's human-readable line
    net = load_network(net_path)
    assert net.dims == (1, 6, 1)

    code = run(["--json", "eval", "--net", str(net_path), "--data", str(data_path)])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["mse"] < 0.5


def test_repair_command(workspace, capsys):
    code = run(["--json", "repair", "--net", str(workspace["net"]),
                "--layer", "2", "--predicate", str(workspace["pred"]),
                "--samples", str(workspace["data"]),
                "--delta-max", "3.0", "--out", str(workspace["out"]),
                "--report", str(workspace["report"])])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["evaluation"]["satisfaction_rate"] == 1.0
    assert workspace["report"].exists()
    repaired = load_network(workspace["out"])
    report = json.loads(workspace["report"].read_text())
    assert report["layer"] == 2
    X = np.array([[0.3, -0.4]])
    assert forward_batch(repaired, X)[0, 0] <= 1e-6


def test_repair_layer_zero_is_usage_error(workspace, capsys):
    code = run(["repair", "--net", str(workspace["net"]), "--layer", "0",
                "--predicate", str(workspace["pred"]),
                "--samples", str(workspace["data"]),
                "--out", str(workspace["out"])])
    assert code == 1
    assert "1-indexed" in capsys.readouterr().err


def test_repair_infeasible_exit_code(tmp_path, capsys):
    from relurepair.network import Layer, Network
    net = Network([Layer([[1.0], [1.0]], [0.0, 0.0]), Layer([[1.0, 1.0]], [0.5])])
    data = make_dataset([[1.0], [2.0]], [[0.0], [0.0]], [True, True])
    net_path, data_path, pred_path = (tmp_path / "n.json", tmp_path / "d.csv",
                                      tmp_path / "p.json")
    save_network(net, net_path)
    save_dataset(data, data_path)
    save_predicate(build_halfspace([1.0], "<=", -100.0), pred_path)
    code = run(["repair", "--net", str(net_path), "--layer", "2",
                "--predicate", str(pred_path), "--samples", str(data_path),
                "--delta-max", "0.01", "--out", str(tmp_path / "r.json")])
    assert code == 2


def test_missing_file_is_io_error(tmp_path):
    code = run(["eval", "--net", str(tmp_path / "nope.json"),
                "--data", str(tmp_path / "nope.csv")])
    assert code == 1


def test_falsify_deterministic(workspace, capsys):
    # --box=... form: a leading '-' in the value would otherwise parse as a flag
    args = ["--json", "falsify", "--net", str(workspace["net"]),
            "--predicate", str(workspace["pred"]),
            "--box=-1,1;-1,1", "--n", "64", "--seed", "5"]
    assert run(args) == 0
    first = capsys.readouterr().out
    assert run(args) == 0
    second = capsys.readouterr().out
    assert first == second
    payload = json.loads(first)
    assert payload["n_hits"] >= 0


def test_simulate_expert(tmp_path, capsys):
    out = tmp_path / "traj"
    code = run(["--json", "simulate", "--policy", "expert",
                "--n-rollouts", "3", "--seed", "1", "--out", str(out)])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["reached_goal"] == 3
    assert (out / "trajectory_0.csv").exists()


def test_export_lp(workspace, tmp_path, capsys):
    instance = {
        "net": str(workspace["net"]),
        "layer": 1,
        "predicate": str(workspace["pred"]),
        "samples": str(workspace["data"]),
        "delta_max": 1.0,
    }
    inst_path = tmp_path / "instance.json"
    inst_path.write_text(json.dumps(instance))
    lp_path = tmp_path / "instance.lp"
    code = run(["--json", "export", "--instance", str(inst_path),
                "--lp", str(lp_path)])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    text = lp_path.read_text()
    assert payload["binaries"] > 0
    assert "Minimize" in text and "Binaries" in text and "End" in text


def test_scenario_file_round_trip(tmp_path, capsys):
    scenario = {"goal_center": [0.0, 0.0], "goal_radius": 0.2,
                "obstacle_center": [-1.5, -3.0], "obstacle_radius": 0.2,
                "init_lower": [-5.0, -5.0, 0.0],
                "init_upper": [-3.0, -3.0, math.pi / 2],
                "gamma": 1.0, "dt": 0.01, "horizon": 4000}
    sc_path = tmp_path / "scenario.json"
    sc_path.write_text(json.dumps(scenario))
    code = run(["--json", "simulate", "--policy", "expert",
                "--scenario", str(sc_path), "--n-rollouts", "2", "--seed", "0"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["n_rollouts"] == 2
