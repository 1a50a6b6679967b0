"""Run configuration: YAML schema, validation, and object construction.

The schema is strict: unknown keys are rejected with the offending path,
and every physical quantity is validated on load.  Example configs under
``configs/`` are the reference for the dialect.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np
import yaml

from .errors import ConfigError
from .model import LegModel, LinkParams, crouch_configuration
from .solver import SolverOptions
from .terrain import Terrain
from .transcription import TaskSpec

_MODEL_KEYS = {"base_mode", "lengths", "masses", "inertias", "com_offsets",
               "joint_position_bounds", "joint_velocity_limit",
               "joint_effort_limit", "gravity"}
_TASK_KEYS = {"family", "N", "h", "initial", "goal", "weights",
              "feature_map", "paper_exact_dynamics_rows",
              "contact_force_factor"}
_INITIAL_KEYS = {"base_height", "q", "qd", "foot", "knee_sign"}
_GOAL_KEYS = {"trunk_height", "joints", "reach_fraction", "early_weight"}
_WEIGHT_KEYS = {"trunk", "joints", "effort", "terminal_factor"}
_SOLVER_KEYS = {"kkt_tol", "max_iterations", "max_stage_iterations", "mu0",
                "mu_shrink", "mu_min", "comp_theta", "comp_delta_floor",
                "fd_step", "hessian", "ls_backtrack", "armijo_c1",
                "reg_floor", "ftb_tau", "kappa_eps"}
_OUTPUT_KEYS = {"directory", "formats"}
_TOP_KEYS = {"model", "terrain", "task", "solver", "output", "seed"}


def _reject_unknown(section: dict, allowed: set, path: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected a mapping")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")


def _require(section: dict, key: str, path: str):
    if key not in section:
        raise ConfigError(f"{path}: missing required key {key!r}")
    return section[key]


def _finite(value, path: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if not np.isfinite(v):
        raise ConfigError(f"{path}: value must be finite")
    return v


def _pair(value, path: str) -> tuple[float, float]:
    if np.isscalar(value):
        v = _finite(value, path)
        return (v, v)
    if len(value) != 2:
        raise ConfigError(f"{path}: expected two entries")
    return (_finite(value[0], path), _finite(value[1], path))


@dataclass
class RunConfig:
    model: LegModel
    terrain: Terrain
    task: TaskSpec
    solver: SolverOptions
    output_dir: str
    seed: int
    raw: dict
    config_hash: str

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, task=replace(self.task, seed=seed))


def _build_model(section: dict) -> LegModel:
    _reject_unknown(section, _MODEL_KEYS, "model")
    lengths = section.get("lengths", {})
    _reject_unknown(lengths, {"l1", "l2"}, "model.lengths")
    l1 = _finite(lengths.get("l1", 0.35), "model.lengths.l1")
    l2 = _finite(lengths.get("l2", 0.33), "model.lengths.l2")
    if l1 <= 0 or l2 <= 0:
        raise ConfigError("model.lengths: link lengths must be positive")
    masses = section.get("masses", {})
    _reject_unknown(masses, {"trunk", "upper", "lower"}, "model.masses")
    inertias = section.get("inertias", {})
    _reject_unknown(inertias, {"trunk", "upper", "lower"}, "model.inertias")
    com_offsets = section.get("com_offsets", {})
    _reject_unknown(com_offsets, {"trunk", "upper", "lower"}, "model.com_offsets")

    def link(name, default_mass, default_com, default_inertia):
        mass = _finite(masses.get(name, default_mass), f"model.masses.{name}")
        com = com_offsets.get(name, default_com)
        com = (_finite(com[0], f"model.com_offsets.{name}"),
               _finite(com[1], f"model.com_offsets.{name}"))
        inertia = _finite(inertias.get(name, default_inertia),
                          f"model.inertias.{name}")
        return LinkParams(mass, com, inertia)

    trunk = link("trunk", 7.0, (0.0, 0.0), 0.07)
    upper = link("upper", 2.5, (0.0, -l1 / 2), 2.5 * l1 ** 2 / 12)
    lower = link("lower", 1.5, (0.0, -l2 / 2), 1.5 * l2 ** 2 / 12)
    bounds = section.get("joint_position_bounds",
                         {"lower": [-1.2, 0.02], "upper": [1.2, 2.5]})
    _reject_unknown(bounds, {"lower", "upper"}, "model.joint_position_bounds")
    kwargs = dict(
        base_mode=section.get("base_mode", "slider"),
        l1=l1, l2=l2, trunk=trunk, upper=upper, lower=lower,
        joint_pos_lower=_pair(bounds.get("lower", [-1.2, 0.02]),
                              "model.joint_position_bounds.lower"),
        joint_pos_upper=_pair(bounds.get("upper", [1.2, 2.5]),
                              "model.joint_position_bounds.upper"),
        joint_vel_limit=_pair(section.get("joint_velocity_limit", 12.0),
                              "model.joint_velocity_limit"),
        joint_effort_limit=_pair(section.get("joint_effort_limit", 120.0),
                                 "model.joint_effort_limit"),
        gravity=_finite(section.get("gravity", 9.81), "model.gravity"),
    )
    return LegModel(**kwargs)


def _build_terrain(section: dict) -> Terrain:
    _reject_unknown(section, {"segments", "ramp_width"}, "terrain")
    segments = _require(section, "segments", "terrain")
    if not isinstance(segments, list) or not segments:
        raise ConfigError("terrain.segments: expected a nonempty list")
    triples = []
    for i, seg in enumerate(segments):
        if len(seg) != 3:
            raise ConfigError(
                f"terrain.segments[{i}]: expected [x_start, x_end, height]")
        triples.append(tuple(_finite(v, f"terrain.segments[{i}]") for v in seg))
    ramp = _finite(section.get("ramp_width", 0.02), "terrain.ramp_width")
    return Terrain(tuple(triples), ramp_width=ramp)


def _build_task(section: dict, model: LegModel, seed: int) -> TaskSpec:
    _reject_unknown(section, _TASK_KEYS, "task")
    N = section.get("N", 60)
    if not isinstance(N, int) or N < 2:
        raise ConfigError("task.N: expected an integer >= 2")
    h = _finite(section.get("h", 0.01), "task.h")
    if h <= 0:
        raise ConfigError("task.h: time step must be positive")

    initial = _require(section, "initial", "task")
    _reject_unknown(initial, _INITIAL_KEYS, "task.initial")
    if "q" in initial:
        q0 = np.array([_finite(v, "task.initial.q") for v in initial["q"]])
        if q0.shape != (model.n,):
            raise ConfigError(
                f"task.initial.q: expected {model.n} entries, got {q0.size}")
    elif "base_height" in initial:
        foot = initial.get("foot", [0.0, 0.0])
        q0 = crouch_configuration(
            model, _finite(initial["base_height"], "task.initial.base_height"),
            foot_x=_finite(foot[0], "task.initial.foot"),
            foot_z=_finite(foot[1], "task.initial.foot"),
            knee_sign=int(initial.get("knee_sign", 1)))
    else:
        raise ConfigError("task.initial: provide either q or base_height")
    qd0 = np.array([_finite(v, "task.initial.qd")
                    for v in initial.get("qd", [0.0] * model.n)])
    if qd0.shape != (model.n,):
        raise ConfigError(
            f"task.initial.qd: expected {model.n} entries, got {qd0.size}")

    goal = _require(section, "goal", "task")
    _reject_unknown(goal, _GOAL_KEYS, "task.goal")
    goal_height = _finite(_require(goal, "trunk_height", "task.goal"),
                          "task.goal.trunk_height")
    goal_joints = goal.get("joints")
    if goal_joints is not None:
        goal_joints = tuple(_finite(v, "task.goal.joints") for v in goal_joints)

    weights = section.get("weights", {})
    _reject_unknown(weights, _WEIGHT_KEYS, "task.weights")

    task = TaskSpec(
        q0=q0, qd0=qd0, goal_trunk_height=goal_height, N=N, h=h,
        goal_joints=goal_joints,
        feature_map=section.get("feature_map", "trunk_joints"),
        weight_trunk=_finite(weights.get("trunk", 100.0), "task.weights.trunk"),
        weight_joints=_finite(weights.get("joints", 1.0), "task.weights.joints"),
        weight_effort=_finite(weights.get("effort", 1e-4), "task.weights.effort"),
        terminal_factor=_finite(weights.get("terminal_factor", 10.0),
                                "task.weights.terminal_factor"),
        family=str(section.get("family", "custom")),
        paper_exact_dynamics_rows=bool(
            section.get("paper_exact_dynamics_rows", False)),
        contact_force_factor=_finite(section.get("contact_force_factor", 20.0),
                                     "task.contact_force_factor"),
        seed=seed,
    )
    reach = _finite(goal.get("reach_fraction", 0.0), "task.goal.reach_fraction")
    if not 0.0 <= reach < 1.0:
        raise ConfigError("task.goal.reach_fraction: expected a value in [0, 1)")
    if reach > 0.0:
        # reach profile: before the switch knot the trunk target is the
        # initial height and the tracking weight is reduced, so the
        # approach (crouch, thrust) is cheap and the late knots dominate
        early = _finite(goal.get("early_weight", 0.05), "task.goal.early_weight")
        if early < 0:
            raise ConfigError("task.goal.early_weight: must be nonnegative")
        w_star = task.feature_targets(model).copy()
        switch = int(round(reach * N))
        w_star[:switch, 0] = q0[model.base_height_index()]
        if w_star.shape[1] > 1:  # hold the initial posture early as well
            w_star[:switch, 1:] = q0[model.n_b:]
        profile = np.ones(N)
        profile[:switch] = early
        task = replace(task, w_star=w_star, knot_weight_profile=profile)
    return task


def _build_solver(section: dict) -> SolverOptions:
    _reject_unknown(section, _SOLVER_KEYS, "solver")
    kwargs = {}
    for key in _SOLVER_KEYS:
        if key in section:
            if key in ("max_iterations", "max_stage_iterations"):
                kwargs[key] = int(section[key])
            elif key == "hessian":
                kwargs[key] = str(section[key])
            else:
                kwargs[key] = _finite(section[key], f"solver.{key}")
    kwargs.setdefault("hessian", "gauss_newton")
    return SolverOptions(**kwargs)


def parse_config(raw: dict, path_label: str = "config") -> RunConfig:
    _reject_unknown(raw, _TOP_KEYS, path_label)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed: expected an integer")
    model = _build_model(raw.get("model", {}))
    terrain = _build_terrain(_require(raw, "terrain", path_label))
    task = _build_task(_require(raw, "task", path_label), model, seed)
    solver = _build_solver(raw.get("solver", {}))
    output = raw.get("output", {})
    _reject_unknown(output, _OUTPUT_KEYS, "output")
    digest = hashlib.sha256(
        json.dumps(raw, sort_keys=True, default=str).encode()).hexdigest()[:16]
    return RunConfig(model=model, terrain=terrain, task=task, solver=solver,
                     output_dir=str(output.get("directory", "out")),
                     seed=seed, raw=raw, config_hash=digest)


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML parse error: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return parse_config(raw, path)
