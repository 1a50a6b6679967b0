"""Trajectory CSV serialization and the metadata sidecar.

One row per knot at t = h, 2h, ..., N h; 17 significant digits so a
round trip reproduces values exactly.  A ``<name>.meta.json`` sidecar
carries the model geometry, terrain, horizon and solver summary that
downstream tools (plotting, `check`) need to interpret the CSV.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import dynamics as dyn
from .errors import DimensionError
from .model import LegModel
from .pipeline import MODE_FORCE_TOL, MODE_PHI_TOL
from .terrain import Terrain
from .transcription import KnotTrajectory, TaskSpec

_FMT = "%.17g"


def trajectory_columns(model: LegModel) -> list[str]:
    cols = ["t"]
    cols += [f"q_b{i+1}" for i in range(model.n_b)]
    cols += [f"q_q{i+1}" for i in range(model.n_q)]
    cols += [f"qd_b{i+1}" for i in range(model.n_b)]
    cols += [f"qd_q{i+1}" for i in range(model.n_q)]
    cols += [f"tau_q{i+1}" for i in range(model.n_q)]
    cols += ["lambda_t", "lambda_n", "foot_x", "foot_z", "phi", "contact_flag"]
    return cols


def save_trajectory(path: str, traj: KnotTrajectory, model: LegModel,
                    terrain: Terrain, task: TaskSpec, meta_extra: dict | None = None):
    N = traj.n_knots
    feet = dyn.forward_kinematics(model, traj.q)
    phi = terrain.signed_distance(feet)
    lam = traj.lam if traj.lam is not None else np.zeros((N, 2))
    tau = traj.tau if traj.tau is not None else np.zeros((N, model.n_q))
    flags = ((phi <= MODE_PHI_TOL) & (lam[:, 1] > MODE_FORCE_TOL)).astype(int)
    t = (np.arange(N) + 1) * task.h
    table = np.column_stack([
        t, traj.q, traj.qd, tau, lam, feet, phi, flags])
    header = ",".join(trajectory_columns(model))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in table:
            fh.write(",".join(_FMT % v for v in row) + "\n")
    meta = {
        "base_mode": model.base_mode,
        "lengths": {"l1": model.l1, "l2": model.l2},
        "masses": {"trunk": model.trunk.mass, "upper": model.upper.mass,
                   "lower": model.lower.mass},
        "com_offsets": {"trunk": list(model.trunk.com),
                        "upper": list(model.upper.com),
                        "lower": list(model.lower.com)},
        "inertias": {"trunk": model.trunk.inertia, "upper": model.upper.inertia,
                     "lower": model.lower.inertia},
        "gravity": model.gravity,
        "terrain": {"segments": [list(s) for s in terrain.segments],
                    "ramp_width": terrain.ramp_width},
        "N": N,
        "h": task.h,
        "q0": [float(v) for v in task.q0],
        "qd0": [float(v) for v in task.qd0],
    }
    if meta_extra:
        meta.update(meta_extra)
    with open(meta_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def meta_path(csv_path: str) -> str:
    base, _ = os.path.splitext(csv_path)
    return base + ".meta.json"


def load_trajectory(path: str, model: LegModel):
    """Returns (times, KnotTrajectory, extras) where extras carries the
    stored foot/phi/contact columns."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        expected = trajectory_columns(model)
        if header != expected:
            raise DimensionError(
                f"{path}: header does not match the model "
                f"(got {len(header)} columns, expected {len(expected)})")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(expected):
        raise DimensionError(f"{path}: ragged row (expected {len(expected)} columns)")
    n, nq = model.n, model.n_q
    col = 1
    q = data[:, col:col + n]; col += n
    qd = data[:, col:col + n]; col += n
    tau = data[:, col:col + nq]; col += nq
    lam = data[:, col:col + 2]; col += 2
    extras = {
        "t": data[:, 0],
        "foot": data[:, col:col + 2],
        "phi": data[:, col + 2],
        "contact_flag": data[:, col + 3].astype(int),
    }
    traj = KnotTrajectory(q=q, qd=qd, tau=tau, lam=lam)
    return extras["t"], traj, extras


def load_meta(csv_path: str) -> dict:
    with open(meta_path(csv_path)) as fh:
        return json.load(fh)
