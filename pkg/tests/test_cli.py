import json
import os

import numpy as np
import pytest
import yaml

from hopplan.cli import main
from hopplan.trajio import load_trajectory

# a tiny hold task that solves in a couple of seconds
FAST = {
    "seed": 1,
    "terrain": {"segments": [[-2.0, 3.0, 0.0]]},
    "task": {
        "family": "hold",
        "N": 4,
        "h": 0.01,
        "initial": {"base_height": 0.58},
        "goal": {"trunk_height": 0.58},
    },
    "solver": {
        "hessian": "gauss_newton",
        "kkt_tol": 1.0e-4,
        "mu0": 0.01,
        "mu_shrink": 0.35,
        "comp_theta": 1000.0,
        "mu_min": 1.0e-10,
    },
}


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "hold.yaml"
    path.write_text(yaml.safe_dump(FAST))
    return str(path)


def test_plan_trivial_task(fast_config, tmp_path):
    out = str(tmp_path / "out")
    rc = main(["plan", fast_config, "--out", out])
    assert rc == 0
    csv_path = os.path.join(out, "trajectory.csv")
    assert os.path.exists(csv_path)
    assert os.path.exists(os.path.join(out, "trajectory.meta.json"))
    assert os.path.exists(os.path.join(out, "phase1_trajectory.csv"))
    assert os.path.exists(os.path.join(out, "verification.txt"))
    assert os.path.exists(os.path.join(out, "solve_hierarchical.tsv"))
    # near-constant trajectory, all knots in contact
    from hopplan.config import load_config
    cfg = load_config(fast_config)
    _, traj, extras = load_trajectory(csv_path, cfg.model)
    assert np.abs(traj.q[:, 0] - 0.58).max() < 5e-3
    assert extras["contact_flag"].all()


def test_plan_full_only(fast_config, tmp_path):
    out = str(tmp_path / "out")
    rc = main(["plan", fast_config, "--full-only", "--out", out])
    assert rc == 0
    assert os.path.exists(os.path.join(out, "trajectory.csv"))
    assert not os.path.exists(os.path.join(out, "phase1_trajectory.csv"))


def test_plan_reproducible_bytes(fast_config, tmp_path):
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["plan", fast_config, "--seed", "7", "--out", out1]) == 0
    assert main(["plan", fast_config, "--seed", "7", "--out", out2]) == 0
    b1 = open(os.path.join(out1, "trajectory.csv"), "rb").read()
    b2 = open(os.path.join(out2, "trajectory.csv"), "rb").read()
    assert b1 == b2


def test_plan_malformed_config(tmp_path):
    bad = tmp_path / "bad.yaml"
    raw = dict(FAST)
    raw["task"] = dict(FAST["task"], h=-0.01)
    bad.write_text(yaml.safe_dump(raw))
    assert main(["plan", str(bad)]) == 2


def test_plan_solve_failure_exit_code(fast_config, tmp_path):
    raw = yaml.safe_load(open(fast_config))
    raw["solver"]["max_iterations"] = 1
    hard = tmp_path / "hard.yaml"
    # an unreachable goal with one iteration cannot converge
    raw["task"]["goal"]["trunk_height"] = 0.85
    hard.write_text(yaml.safe_dump(raw))
    assert main(["plan", str(hard), "--out", str(tmp_path / "o")]) == 3


class TestCheck:
    def test_fresh_plan_passes(self, fast_config, tmp_path):
        out = str(tmp_path / "out")
        assert main(["plan", fast_config, "--out", out]) == 0
        csv_path = os.path.join(out, "trajectory.csv")
        assert main(["check", csv_path, fast_config]) == 0

    def test_edited_force_fails_and_names_knot(self, fast_config, tmp_path, caplog):
        out = str(tmp_path / "out")
        assert main(["plan", fast_config, "--out", out]) == 0
        csv_path = os.path.join(out, "trajectory.csv")
        lines = open(csv_path).read().splitlines()
        header = lines[0].split(",")
        idx = header.index("lambda_n")
        row = lines[2].split(",")
        row[idx] = "-50.0"
        lines[2] = ",".join(row)
        open(csv_path, "w").write("\n".join(lines) + "\n")
        rc = main(["check", csv_path, fast_config])
        assert rc == 4
        assert "knot 1" in caplog.text

    def test_wrong_model_dimension(self, fast_config, tmp_path):
        out = str(tmp_path / "out")
        assert main(["plan", fast_config, "--out", out]) == 0
        raw = yaml.safe_load(open(fast_config))
        raw["model"] = {"base_mode": "planar_float"}
        other = tmp_path / "float.yaml"
        other.write_text(yaml.safe_dump(raw))
        rc = main(["check", os.path.join(out, "trajectory.csv"), str(other)])
        assert rc == 2
