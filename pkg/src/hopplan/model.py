"""Kinematic and inertial description of the planar floating-base leg.

Conventions (pinned by golden-value tests):

* The motion plane is x (horizontal) / z (vertical); gravity acts along -z.
* Angles are measured counterclockwise in the x-z plane.
* ``q_hip = 0`` points the upper link straight down beneath the trunk
  origin; positive hip swings the foot toward +x.
* ``q_knee`` is measured relative to the upper link, positive bending the
  foot toward +x.  With ``q_hip = q_knee = 0`` the leg is fully extended
  and the foot sits at ``(x_b, z_b - l1 - l2)``.
* ``slider`` base: ``q = [z_b, q_hip, q_knee]`` -- the trunk rides a
  vertical rail at x = 0 and cannot pitch.  The rail supplies whatever
  horizontal force and moment it needs to; in generalized coordinates
  this needs no special handling.
* ``planar_float`` base: ``q = [x_b, z_b, pitch, q_hip, q_knee]``.

Default parameters are plausible for an ~11 kg hydraulic leg but are not
measured ground truth; everything is configurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

BASE_MODES = ("slider", "planar_float")


@dataclass(frozen=True)
class LinkParams:
    """Inertial parameters of one body, expressed in its own frame."""

    mass: float
    com: tuple[float, float]
    inertia: float  # rotational inertia about the CoM, kg m^2


@dataclass(frozen=True)
class LegModel:
    base_mode: str = "slider"
    l1: float = 0.35
    l2: float = 0.33
    trunk: LinkParams = field(default_factory=lambda: LinkParams(7.0, (0.0, 0.0), 0.07))
    upper: LinkParams = None
    lower: LinkParams = None
    joint_pos_lower: tuple[float, float] = (-1.2, 0.02)
    joint_pos_upper: tuple[float, float] = (1.2, 2.5)
    joint_vel_limit: tuple[float, float] = (12.0, 12.0)
    joint_effort_limit: tuple[float, float] = (120.0, 120.0)
    gravity: float = 9.81

    def __post_init__(self):
        if self.upper is None:
            object.__setattr__(
                self, "upper",
                LinkParams(2.5, (0.0, -self.l1 / 2), 2.5 * self.l1 ** 2 / 12))
        if self.lower is None:
            object.__setattr__(
                self, "lower",
                LinkParams(1.5, (0.0, -self.l2 / 2), 1.5 * self.l2 ** 2 / 12))
        if self.base_mode not in BASE_MODES:
            raise ConfigError(f"unknown base_mode {self.base_mode!r}")
        if self.l1 <= 0 or self.l2 <= 0:
            raise ConfigError("link lengths must be strictly positive")
        if self.total_mass <= 0:
            raise ConfigError("total mass must be strictly positive")
        for link in (self.trunk, self.upper, self.lower):
            if link.mass < 0 or link.inertia < 0:
                raise ConfigError("body masses and inertias must be nonnegative")
        for lo, hi, what in (
            (self.joint_pos_lower, self.joint_pos_upper, "position"),
            ((-self.joint_vel_limit[0], -self.joint_vel_limit[1]),
             self.joint_vel_limit, "velocity"),
            ((-self.joint_effort_limit[0], -self.joint_effort_limit[1]),
             self.joint_effort_limit, "effort"),
        ):
            if not all(l <= u for l, u in zip(lo, hi)):
                raise ConfigError(f"joint {what} bounds must satisfy lower <= upper")
        if self.gravity <= 0:
            raise ConfigError("gravity magnitude must be positive")

    # -- dimensions ---------------------------------------------------------

    @property
    def n_b(self) -> int:
        return 1 if self.base_mode == "slider" else 3

    @property
    def n_q(self) -> int:
        return 2

    @property
    def n(self) -> int:
        return self.n_b + self.n_q

    @property
    def n_contacts(self) -> int:
        return 1

    @property
    def total_mass(self) -> float:
        return self.trunk.mass + self.upper.mass + self.lower.mass

    # -- helpers ------------------------------------------------------------

    def check_q(self, q: np.ndarray, name: str = "q") -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape[-1] != self.n:
            raise DimensionError(
                f"{name} has trailing dimension {q.shape[-1]}, expected {self.n}")
        return q

    def base_height_index(self) -> int:
        """Index of the trunk-height coordinate within q."""
        return 0 if self.base_mode == "slider" else 1

    def joint_slice(self) -> slice:
        return slice(self.n_b, self.n)


def leg_ik(model: LegModel, base_pos, foot_pos, knee_sign: int = 1):
    """Closed-form joint angles placing the foot at ``foot_pos`` with the
    trunk origin at ``base_pos``.

    ``knee_sign`` selects the knee-forward (+1) or knee-backward (-1)
    branch.  Raises ConfigError when the target is out of reach.
    """
    t = np.asarray(foot_pos, dtype=float) - np.asarray(base_pos, dtype=float)
    d2 = float(t @ t)
    l1, l2 = model.l1, model.l2
    c_knee = (d2 - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    if not -1.0 - 1e-12 <= c_knee <= 1.0 + 1e-12:
        raise ConfigError(
            f"foot target {foot_pos} unreachable from base {base_pos}: "
            f"distance {math.sqrt(d2):.4f}, reach [{abs(l1 - l2):.4f}, {l1 + l2:.4f}]")
    # snap the (anti)stretched singularities so acos noise does not leak in
    q_knee = knee_sign * math.acos(min(1.0, max(-1.0, c_knee)))
    if abs(c_knee - 1.0) < 1e-12:
        q_knee = 0.0
    # angle of the target measured from straight-down, positive toward +x
    psi = math.atan2(t[0], -t[1])
    q_hip = psi - math.atan2(l2 * math.sin(q_knee), l1 + l2 * math.cos(q_knee))
    return q_hip, q_knee


def crouch_configuration(model: LegModel, base_height: float,
                         foot_x: float = 0.0, foot_z: float = 0.0,
                         knee_sign: int = 1) -> np.ndarray:
    """Configuration with the trunk at ``base_height`` and the foot at the
    given ground point (slider: base stays at x = 0, zero pitch)."""
    q_hip, q_knee = leg_ik(model, (0.0, base_height), (foot_x, foot_z), knee_sign)
    if model.base_mode == "slider":
        return np.array([base_height, q_hip, q_knee])
    return np.array([0.0, base_height, 0.0, q_hip, q_knee])
