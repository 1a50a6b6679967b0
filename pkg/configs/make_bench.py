#!/usr/bin/env python3
"""Generate the 8-goal benchmark configs for both task families.

Goal trunk heights are initial + {0.05, 0.10, ..., 0.40} m.  The step
family uses the 15 cm step.  Run from the repository root:

    python3 configs/make_bench.py [outdir]
"""

import sys
from pathlib import Path

import yaml

TEMPLATE = {
    "seed": 0,
    "model": {
        "base_mode": "slider",
        "lengths": {"l1": 0.35, "l2": 0.33},
        "masses": {"trunk": 7.0, "upper": 2.5, "lower": 1.5},
        "joint_position_bounds": {"lower": [-1.2, 0.02], "upper": [1.2, 2.5]},
        "joint_velocity_limit": 12.0,
        "joint_effort_limit": 90.0,
        "gravity": 9.81,
    },
    "solver": {
        "max_iterations": 5000,
        "hessian": "gauss_newton",
        "kkt_tol": 1.0e-4,
        "mu_shrink": 0.5,
        "comp_theta": 100.0,
    },
}

INITIAL_HEIGHT = 0.58
GOAL_OFFSETS = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40]


def build(family: str, offset: float) -> dict:
    cfg = yaml.safe_load(yaml.safe_dump(TEMPLATE))
    if family == "jumping":
        cfg["terrain"] = {"segments": [[-2.0, 3.0, 0.0]]}
    else:
        cfg["terrain"] = {"segments": [[-2.0, 0.2, 0.0], [0.2, 3.0, 0.15]],
                          "ramp_width": 0.02}
    goal = {"trunk_height": round(INITIAL_HEIGHT + offset, 4),
            "reach_fraction": 0.7}
    if family == "step_jumping":
        # desired final posture: foot forward, standing on the step
        goal["joints"] = [0.105553, 0.596561]
        goal["reach_fraction"] = 0.5
    cfg["task"] = {
        "contact_force_factor": 5.0,
        "family": family,
        "N": 30,
        "h": 0.02,
        "initial": {"base_height": INITIAL_HEIGHT},
        "goal": goal,
        "weights": {"trunk": 100.0, "joints": 1.0, "effort": 1.0e-4,
                    "terminal_factor": 10.0},
    }
    return cfg


def main():
    outdir = Path(sys.argv[1] if len(sys.argv) > 1 else "configs/bench")
    outdir.mkdir(parents=True, exist_ok=True)
    for family, tag in (("jumping", "jump"), ("step_jumping", "step")):
        for i, offset in enumerate(GOAL_OFFSETS, start=1):
            path = outdir / f"{tag}_{i:02d}.yaml"
            path.write_text(yaml.safe_dump(build(family, offset), sort_keys=False))
    print(f"wrote {2 * len(GOAL_OFFSETS)} configs to {outdir}")


if __name__ == "__main__":
    main()
