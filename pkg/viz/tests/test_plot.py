import json
import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from plot import (  # noqa: E402
    PlotJob,
    SchemaError,
    com_of,
    leg_points,
    load_table,
    main,
    plot_trajectory,
)

GOLDEN = os.path.join(os.path.dirname(__file__), "..", "..", "tests", "data",
                      "fk_golden.json")

HEADER = ("t,q_b1,q_q1,q_q2,qd_b1,qd_q1,qd_q2,tau_q1,tau_q2,"
          "lambda_t,lambda_n,foot_x,foot_z,phi,contact_flag")


def _write_fixture(tmp_path, rows, meta=None, header=HEADER):
    path = tmp_path / "traj.csv"
    lines = [header] + [",".join("%.17g" % v for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    if meta is None:
        meta = {
            "base_mode": "slider",
            "lengths": {"l1": 0.35, "l2": 0.33},
            "masses": {"trunk": 7.0, "upper": 2.5, "lower": 1.5},
            "com_offsets": {"trunk": [0.0, 0.0], "upper": [0.0, -0.175],
                            "lower": [0.0, -0.165]},
            "terrain": {"segments": [[-2.0, 3.0, 0.0]], "ramp_width": 0.02},
            "N": len(rows), "h": 0.01,
        }
    (tmp_path / "traj.meta.json").write_text(json.dumps(meta))
    return str(path)


def _constant_rows(n=5, contact=1.0):
    # straight leg standing at full extension
    row = [0.0, 0.68, 0.0, 0.0, 0, 0, 0, 0, 0, 0.0, 107.91, 0.0, 0.0, 0.0,
           contact]
    rows = []
    for k in range(n):
        r = list(row)
        r[0] = 0.01 * (k + 1)
        rows.append(r)
    return rows


def test_golden_fk_vector_matches_duplicated_chain():
    with open(GOLDEN) as fh:
        vec = json.load(fh)
    lengths = vec["lengths"]
    for case in vec["cases"]:
        zb, hip, knee = case["q"]
        _, _, foot = leg_points(lengths, (0.0, zb), 0.0, hip, knee)
        assert math.isclose(foot[0], case["foot"][0], abs_tol=1e-12)
        assert math.isclose(foot[1], case["foot"][1], abs_tol=1e-12)


def test_constant_trajectory_renders(tmp_path):
    path = _write_fixture(tmp_path, _constant_rows())
    files = plot_trajectory(PlotJob(trajectory=path, out_dir=str(tmp_path)))
    assert len(files) == 2
    for f in files:
        assert os.path.getsize(f) > 1000


def test_shading_matches_contact_flag(tmp_path, monkeypatch):
    rows = _constant_rows(6)
    for k in (2, 3):
        rows[k][-1] = 0.0  # a flight window
    path = _write_fixture(tmp_path, rows)
    spans = []
    import plot as plot_mod

    real = plot_mod._shade_contacts

    def spy(ax, t, flags):
        spans.append(list(flags))
        return real(ax, t, flags)

    monkeypatch.setattr(plot_mod, "_shade_contacts", spy)
    plot_trajectory(PlotJob(trajectory=path, out_dir=str(tmp_path)))
    expected = [True, True, False, False, True, True]
    assert spans and all(s == expected for s in spans)


def test_missing_column_is_schema_error(tmp_path):
    bad_header = HEADER.replace("contact_flag", "contact")
    rows = [[0.01] + [0.0] * 14]
    path = _write_fixture(tmp_path, rows, header=bad_header)
    with pytest.raises(SchemaError, match="contact_flag"):
        load_table(path)
    assert main([path, "--out", str(tmp_path)]) == 2


def test_com_matches_mass_weighted_sum():
    meta = {
        "lengths": {"l1": 0.35, "l2": 0.33},
        "masses": {"trunk": 7.0, "upper": 2.5, "lower": 1.5},
        "com_offsets": {"trunk": [0.0, 0.0], "upper": [0.0, -0.175],
                        "lower": [0.0, -0.165]},
    }
    cx, cz = com_of(meta, (0.0, 0.68), 0.0, 0.0, 0.0)
    expected_z = (7.0 * 0.68 + 2.5 * 0.505 + 1.5 * 0.165) / 11.0
    assert math.isclose(cx, 0.0, abs_tol=1e-12)
    assert math.isclose(cz, expected_z, abs_tol=1e-12)


def test_deterministic_output(tmp_path):
    path = _write_fixture(tmp_path, _constant_rows())
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    f1 = plot_trajectory(PlotJob(trajectory=path, out_dir=str(out1)))
    f2 = plot_trajectory(PlotJob(trajectory=path, out_dir=str(out2)))
    for a, b in zip(f1, f2):
        assert open(a, "rb").read() == open(b, "rb").read()
