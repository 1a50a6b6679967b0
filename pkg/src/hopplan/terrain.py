"""Piecewise-flat terrain and the contact complementarity residuals.

The terrain is a height field over x built from contiguous flat segments.
Signed distance of a point is its height above the column underneath it,
so vertical step faces are never contact surfaces.  Step edges are
blended with a C1 smoothstep ramp (default 2 cm wide) so that derivative
information near an edge stays informative for the optimizer; the ramp
width is a modeling knob.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TerrainCoverageError

# tolerances used when classifying accepted solutions
NONNEG_TOL = 1e-8        # lambda_n >= -tol, phi >= -tol
COMPLEMENTARITY_TOL = 1e-6   # |lambda_n * phi|, |lambda_n * dx_t| <= tol

NORMAL = np.array([0.0, 1.0])
TANGENT = np.array([1.0, 0.0])


@dataclass(frozen=True)
class Terrain:
    """Ordered, gap-free list of flat segments (x_start, x_end, height)."""

    segments: tuple[tuple[float, float, float], ...]
    ramp_width: float = 0.02

    def __post_init__(self):
        if not self.segments:
            raise ConfigError("terrain needs at least one segment")
        segs = tuple(tuple(float(v) for v in s) for s in self.segments)
        object.__setattr__(self, "segments", segs)
        for x0, x1, z in segs:
            if not (np.isfinite(x0) and np.isfinite(x1) and np.isfinite(z)):
                raise ConfigError("terrain segments must be finite")
            if x1 <= x0:
                raise ConfigError(f"segment ({x0}, {x1}) has nonpositive width")
        for (_, x1, _), (x0, _, _) in zip(segs, segs[1:]):
            if abs(x1 - x0) > 1e-12:
                raise ConfigError("terrain segments must be contiguous and sorted")
        if self.ramp_width < 0:
            raise ConfigError("ramp_width must be nonnegative")

    @staticmethod
    def flat(height: float = 0.0, x_range=(-2.0, 3.0)) -> "Terrain":
        return Terrain(((x_range[0], x_range[1], height),))

    @staticmethod
    def step(edge_x: float, low: float, high: float,
             x_range=(-2.0, 3.0), ramp_width: float = 0.02) -> "Terrain":
        return Terrain(((x_range[0], edge_x, low), (edge_x, x_range[1], high)),
                       ramp_width=ramp_width)

    @property
    def x_min(self) -> float:
        return self.segments[0][0]

    @property
    def x_max(self) -> float:
        return self.segments[-1][1]

    def _check_coverage(self, x):
        bad = (x < self.x_min - 1e-12) | (x > self.x_max + 1e-12)
        if np.any(bad):
            raise TerrainCoverageError(
                f"x = {np.atleast_1d(x)[np.atleast_1d(bad)][0]:.4f} outside terrain "
                f"coverage [{self.x_min}, {self.x_max}]")

    def height(self, x) -> np.ndarray:
        """Terrain height under x, with edges ramped over ramp_width."""
        x = np.asarray(x, dtype=float)
        self._check_coverage(x)
        starts = np.array([s[0] for s in self.segments])
        heights = np.array([s[2] for s in self.segments])
        idx = np.clip(np.searchsorted(starts, x, side="right") - 1,
                      0, len(self.segments) - 1)
        h = heights[idx]
        w = self.ramp_width
        if w > 0:
            for (x0, x1, z_l), (_, _, z_r) in zip(self.segments, self.segments[1:]):
                edge = x1
                in_ramp = np.abs(x - edge) < w / 2
                if np.any(in_ramp):
                    s = (x - (edge - w / 2)) / w
                    s = np.clip(s, 0.0, 1.0)
                    blend = z_l + (z_r - z_l) * (3 * s ** 2 - 2 * s ** 3)
                    h = np.where(in_ramp, blend, h)
        return h

    def signed_distance(self, point) -> np.ndarray:
        """phi = z - height(x) for world point(s) shaped (..., 2)."""
        point = np.asarray(point, dtype=float)
        return point[..., 1] - self.height(point[..., 0])

    def surface_frame(self, x=None):
        """(normal, tangent) of the contact surface; flat segments only,
        so these are the world axes."""
        if x is not None:
            self._check_coverage(np.asarray(x, dtype=float))
        return NORMAL.copy(), TANGENT.copy()


@dataclass(frozen=True)
class ContactResidual:
    """Complementarity bookkeeping for one knot."""

    phi: float
    lambda_n: float
    tangential_disp: float
    gap_product: float        # lambda_n * phi
    slip_product: float       # lambda_n * (x_t[k] - x_t[k-1])
    force_nonneg: float       # min(lambda_n, 0)
    gap_nonneg: float         # min(phi, 0)


def contact_complementarity_residuals(phi: float, lambda_n: float,
                                      foot_x_tangential: float,
                                      foot_x_tangential_prev: float) -> ContactResidual:
    disp = float(foot_x_tangential) - float(foot_x_tangential_prev)
    return ContactResidual(
        phi=float(phi),
        lambda_n=float(lambda_n),
        tangential_disp=disp,
        gap_product=float(lambda_n) * float(phi),
        slip_product=float(lambda_n) * disp,
        force_nonneg=min(float(lambda_n), 0.0),
        gap_nonneg=min(float(phi), 0.0),
    )
