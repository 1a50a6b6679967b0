#!/usr/bin/env python3
"""Offline trajectory plots: body/foot height with contact-phase shading,
plus a stick-figure strip of the leg.

Reads the planner's trajectory CSV and its ``.meta.json`` sidecar; needs
nothing from the planner package itself.  The two-link forward kinematics
is deliberately duplicated here (and pinned against a shared golden test
vector) so the plots stay independent of the planning code.

Usage:
    plot.py <trajectory.csv> [--out DIR] [--frames K] [--no-shading]
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

EXIT_SCHEMA = 2

BASE_COLUMNS = ["t", "q_q1", "q_q2", "lambda_t", "lambda_n",
                "foot_x", "foot_z", "phi", "contact_flag"]


class SchemaError(Exception):
    pass


@dataclass
class PlotJob:
    trajectory: str
    out_dir: str = "."
    frames: int = 8
    shading: bool = True


def load_table(path: str) -> dict:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(header):
        raise SchemaError(f"{path}: ragged rows")
    cols = {name: data[:, i] for i, name in enumerate(header)}
    missing = [c for c in BASE_COLUMNS if c not in cols]
    if missing:
        raise SchemaError(f"{path}: missing column {missing[0]!r}")
    n_base = sum(1 for c in header if c.startswith("q_b"))
    if n_base not in (1, 3):
        raise SchemaError(f"{path}: expected 1 or 3 base columns, found {n_base}")
    cols["_n_base"] = n_base
    return cols


def load_meta(csv_path: str) -> dict:
    base, _ = os.path.splitext(csv_path)
    path = base + ".meta.json"
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise SchemaError(f"metadata sidecar not found: {path}") from None


# -- duplicated planar leg geometry -------------------------------------------

def leg_points(lengths: dict, base_xz, pitch: float, q_hip: float,
               q_knee: float):
    """World positions of hip, knee and foot.

    Conventions match the planner: zero hip points the leg straight down,
    positive angles swing toward +x, the knee angle is relative to the
    upper link.
    """
    l1, l2 = lengths["l1"], lengths["l2"]
    hx, hz = base_xz
    a1 = pitch + q_hip
    kx = hx + l1 * math.sin(a1)
    kz = hz - l1 * math.cos(a1)
    a2 = a1 + q_knee
    fx = kx + l2 * math.sin(a2)
    fz = kz - l2 * math.cos(a2)
    return (hx, hz), (kx, kz), (fx, fz)


def com_of(meta: dict, base_xz, pitch: float, q_hip: float, q_knee: float):
    """Whole-body CoM from the metadata masses and CoM offsets."""
    masses = meta["masses"]
    offs = meta["com_offsets"]
    l1 = meta["lengths"]["l1"]

    def place(origin, angle, off):
        c, s = math.cos(angle), math.sin(angle)
        return (origin[0] + c * off[0] - s * off[1],
                origin[1] + s * off[0] + c * off[1])

    hip, knee, _ = leg_points(meta["lengths"], base_xz, pitch, q_hip, q_knee)
    points = {
        "trunk": place(base_xz, pitch, offs["trunk"]),
        "upper": place(hip, pitch + q_hip, offs["upper"]),
        "lower": place(knee, pitch + q_hip + q_knee, offs["lower"]),
    }
    total = sum(masses.values())
    cx = sum(masses[k] * points[k][0] for k in points) / total
    cz = sum(masses[k] * points[k][1] for k in points) / total
    return cx, cz


def _states(cols, meta):
    n_base = cols["_n_base"]
    if n_base == 1:
        base = [(0.0, zb) for zb in cols["q_b1"]]
        pitch = np.zeros(len(cols["t"]))
    else:
        base = list(zip(cols["q_b1"], cols["q_b2"]))
        pitch = cols["q_b3"]
    return base, pitch


def _shade_contacts(ax, t, flags):
    on = False
    start = 0.0
    for i, f in enumerate(flags):
        if f and not on:
            start, on = t[i], True
        elif not f and on:
            ax.axvspan(start, t[i], color="0.85", zorder=0)
            on = False
    if on:
        ax.axvspan(start, t[-1], color="0.85", zorder=0)


def plot_trajectory(job: PlotJob) -> list[str]:
    cols = load_table(job.trajectory)
    meta = load_meta(job.trajectory)
    base, pitch = _states(cols, meta)
    t = cols["t"]
    com_z = np.array([com_of(meta, base[i], pitch[i], cols["q_q1"][i],
                             cols["q_q2"][i])[1] for i in range(len(t))])
    os.makedirs(job.out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(job.trajectory))[0]
    written = []

    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax = axes[0]
    if job.shading:
        _shade_contacts(ax, t, cols["contact_flag"] > 0.5)
    ax.plot(t, com_z, label="CoM height", color="tab:blue")
    ax.plot(t, [b[1] for b in base], label="trunk height", color="tab:purple")
    ax.plot(t, cols["foot_z"], label="foot height", color="tab:orange")
    ax.set_ylabel("z [m]")
    ax.legend(loc="upper left", fontsize=8)
    ax.set_title("motion with contact phases shaded")
    ax = axes[1]
    if job.shading:
        _shade_contacts(ax, t, cols["contact_flag"] > 0.5)
    ax.plot(t, cols["lambda_n"], label="normal force", color="tab:red")
    ax.plot(t, cols["lambda_t"], label="tangential force", color="tab:green")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("force [N]")
    ax.legend(loc="upper right", fontsize=8)
    path = os.path.join(job.out_dir, f"{stem}_timeseries.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(8, 4))
    for x0, x1, z in meta["terrain"]["segments"]:
        ax.plot([x0, x1], [z, z], color="k", lw=2)
    idx = np.linspace(0, len(t) - 1, min(job.frames, len(t))).astype(int)
    for j, i in enumerate(idx):
        shade = 0.15 + 0.75 * j / max(len(idx) - 1, 1)
        hip, knee, foot = leg_points(meta["lengths"], base[i], pitch[i],
                                     cols["q_q1"][i], cols["q_q2"][i])
        color = (1 - shade, 0.2, shade)
        ax.plot([hip[0], knee[0], foot[0]], [hip[1], knee[1], foot[1]],
                "-o", color=color, markersize=2.5, lw=1.5,
                label=f"t={t[i]:.2f}s" if j in (0, len(idx) - 1) else None)
        ax.plot([hip[0]], [hip[1]], "s", color=color, markersize=6)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.legend(fontsize=8)
    ax.set_title("stick-figure frames")
    path = os.path.join(job.out_dir, f"{stem}_frames.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("trajectory")
    parser.add_argument("--out", default=".")
    parser.add_argument("--frames", type=int, default=8)
    parser.add_argument("--no-shading", action="store_true")
    args = parser.parse_args(argv)
    job = PlotJob(trajectory=args.trajectory, out_dir=args.out,
                  frames=args.frames, shading=not args.no_shading)
    try:
        for path in plot_trajectory(job):
            print(path)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    return 0


if __name__ == "__main__":
    sys.exit(main())
