"""Direct transcription of the two planning problems on N knots.

Phase 1 (centroidal) decision variables per knot: q, qd, r, rd, hc, hcd,
x, lam.  Phase 2 (full dynamics): q, qd, tau, lam.  Both phases use the
implicit Euler rule ``y[k-1] - y[k] + h * yd[k] = 0`` with a fixed step,
so knot k couples only to knot k-1 and the constraint Jacobian is banded
in the knot index.

The initial state enters as fixed data referenced by the k = 1 rows, not
as decision variables, so a slider phase-1 problem has exactly 16 * N
variables.

On the slider base the rail supplies an arbitrary horizontal force plus a
moment, so the x-momentum and angular-rate rows would only serve to
define that reaction; they are omitted, which is algebraically equivalent
to carrying the reaction as an unconstrained variable and eliminating it.
The vertical momentum row is rail-free and kept.  ``planar_float`` keeps
all rows.

Contact-related rows (gap nonnegativity and complementarity products) are
scaled up by ``GAP_ROW_SCALE`` and ``PROD_ROW_SCALE`` so that the solver's
feasibility tolerance pins the physical quantities several orders of
magnitude tighter than the row residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import dynamics as dyn
from .errors import ConfigError, DimensionError, InfeasibleTaskError
from .model import LegModel
from .terrain import Terrain

# row scales keep physical contact tolerances two or more orders tighter
# than the solver's feasibility tolerance
GAP_ROW_SCALE = 1e3      # phi >= 0 rows
PROD_ROW_SCALE = 1e3     # complementarity product rows

# generous box bounds on variables the physics does not otherwise bound;
# they keep interior-point iterates sane and are never active at solutions
BASE_POS_BOUND = (-1.0, 3.0)
BASE_PITCH_BOUND = (-np.pi, np.pi)
BASE_VEL_BOUND = 30.0
COM_BOUND = 5.0
COM_VEL_BOUND = 30.0
HC_BOUND = 200.0
HCD_BOUND = 4000.0


@dataclass(frozen=True)
class TaskSpec:
    """One planning task: horizon, initial state, goal, and weights."""

    q0: np.ndarray
    qd0: np.ndarray
    goal_trunk_height: float
    N: int = 60
    h: float = 0.01
    goal_joints: tuple[float, float] | None = None
    feature_map: str = "trunk_joints"
    weight_trunk: float = 100.0
    weight_joints: float = 1.0
    weight_effort: float = 1e-4
    terminal_factor: float = 10.0
    w_star: np.ndarray | None = None  # per-knot feature targets (N, n_w)
    knot_weight_profile: np.ndarray | None = None  # per-knot cost factors (N,)
    contact_force_factor: float = 20.0  # lambda bound, multiples of m g
    family: str = "custom"
    paper_exact_dynamics_rows: bool = False  # drop h on the B*tau term
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "q0", np.asarray(self.q0, dtype=float))
        object.__setattr__(self, "qd0", np.asarray(self.qd0, dtype=float))
        if self.N < 2:
            raise ConfigError("N must be at least 2")
        if self.h <= 0:
            raise ConfigError("h must be positive")
        for w in (self.weight_trunk, self.weight_joints, self.weight_effort):
            if w < 0:
                raise ConfigError("weights must be nonnegative")
        if self.feature_map not in ("trunk_joints", "trunk"):
            raise ConfigError(f"unknown feature map {self.feature_map!r}")
        if self.w_star is not None:
            object.__setattr__(self, "w_star", np.asarray(self.w_star, dtype=float))
        if self.knot_weight_profile is not None:
            prof = np.asarray(self.knot_weight_profile, dtype=float)
            if prof.shape != (self.N,) or np.any(prof < 0):
                raise ConfigError(
                    "knot_weight_profile must be N nonnegative factors")
            object.__setattr__(self, "knot_weight_profile", prof)

    def feature_matrix(self, model: LegModel) -> np.ndarray:
        rows = [model.base_height_index()]
        if self.feature_map == "trunk_joints":
            rows += list(range(model.n_b, model.n))
        S = np.zeros((len(rows), model.n))
        for i, j in enumerate(rows):
            S[i, j] = 1.0
        return S

    def feature_weights(self) -> np.ndarray:
        if self.feature_map == "trunk":
            return np.array([self.weight_trunk])
        return np.array([self.weight_trunk, self.weight_joints, self.weight_joints])

    def feature_targets(self, model: LegModel) -> np.ndarray:
        """Per-knot targets w*(k), shape (N, n_w)."""
        if self.w_star is not None:
            w = self.w_star
            n_w = 1 if self.feature_map == "trunk" else 1 + model.n_q
            if w.shape != (self.N, n_w):
                raise DimensionError(
                    f"w_star has shape {w.shape}, expected {(self.N, n_w)}")
            return w
        joints = self.goal_joints
        if joints is None:
            joints = tuple(self.q0[model.n_b:])
        if self.feature_map == "trunk":
            target = np.array([self.goal_trunk_height])
        else:
            target = np.array([self.goal_trunk_height, *joints])
        return np.tile(target, (self.N, 1))

    def knot_weights(self) -> np.ndarray:
        w = (np.ones(self.N) if self.knot_weight_profile is None
             else self.knot_weight_profile.copy())
        w[-1] *= self.terminal_factor
        return w


@dataclass
class KnotTrajectory:
    """Discrete decision trajectory over knots 1..N (stored 0-based)."""

    q: np.ndarray
    qd: np.ndarray
    lam: np.ndarray | None = None
    r: np.ndarray | None = None
    rd: np.ndarray | None = None
    hc: np.ndarray | None = None
    hcd: np.ndarray | None = None
    x: np.ndarray | None = None
    tau: np.ndarray | None = None

    def __post_init__(self):
        N = self.q.shape[0]
        for name in ("qd", "lam", "r", "rd", "hc", "hcd", "x", "tau"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != N:
                raise DimensionError(f"{name} has {arr.shape[0]} knots, expected {N}")

    @property
    def n_knots(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True)
class Layout:
    """Flat decision-vector layout: knot-major, named per-knot fields."""

    fields: tuple[tuple[str, int], ...]
    n_knots: int

    @property
    def knot_dim(self) -> int:
        return sum(d for _, d in self.fields)

    @property
    def n_vars(self) -> int:
        return self.knot_dim * self.n_knots

    def offset(self, name: str) -> int:
        off = 0
        for fname, d in self.fields:
            if fname == name:
                return off
            off += d
        raise KeyError(name)

    def dim(self, name: str) -> int:
        for fname, d in self.fields:
            if fname == name:
                return d
        raise KeyError(name)

    def view(self, z: np.ndarray, name: str) -> np.ndarray:
        """Zero-copy (N, dim) view of one field across all knots."""
        off = self.offset(name)
        return z.reshape(self.n_knots, self.knot_dim)[:, off:off + self.dim(name)]

    def indices(self, name: str, knot: int, component: int | None = None) -> np.ndarray:
        base = knot * self.knot_dim + self.offset(name)
        if component is not None:
            return np.array([base + component])
        return np.arange(base, base + self.dim(name))

    def pack(self, traj: KnotTrajectory) -> np.ndarray:
        if traj.n_knots != self.n_knots:
            raise DimensionError(
                f"trajectory has {traj.n_knots} knots, layout expects {self.n_knots}")
        z = np.zeros(self.n_vars)
        for name, d in self.fields:
            arr = getattr(traj, name)
            if arr is None:
                raise DimensionError(f"trajectory is missing field {name!r}")
            self.view(z, name)[:] = np.asarray(arr).reshape(self.n_knots, d)
        return z

    def unpack(self, z: np.ndarray) -> KnotTrajectory:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n_vars,):
            raise DimensionError(f"vector has shape {z.shape}, expected ({self.n_vars},)")
        kwargs = {}
        for name, d in self.fields:
            arr = self.view(z, name).copy()
            if d == 1:
                arr = arr[:, 0]
            kwargs[name] = arr
        return KnotTrajectory(**kwargs)


def phase1_layout(model: LegModel, N: int) -> Layout:
    n = model.n
    return Layout(
        fields=(("q", n), ("qd", n), ("r", 2), ("rd", 2), ("hc", 1),
                ("hcd", 1), ("x", 2), ("lam", 2)),
        n_knots=N)


def phase2_layout(model: LegModel, N: int) -> Layout:
    n = model.n
    return Layout(fields=(("q", n), ("qd", n), ("tau", model.n_q), ("lam", 2)),
                  n_knots=N)


@dataclass(frozen=True)
class PairGroup:
    """A family of complementarity pairs, one per knot.

    ``a`` is nonnegative by construction (a bounded variable); ``b`` is a
    gap (one-sided product) or a signed displacement (two-sided).
    ``b_jac_fn`` optionally supplies the (n_pairs x n_vars) gradient of b;
    without it the solver falls back to finite differences.  The solver
    uses it to put the bilinear curvature of the product rows into its
    Hessian model, which is what keeps full Newton steps acceptable near
    active contacts.
    """

    name: str
    two_sided: bool
    scale: float
    a_fn: object
    b_fn: object
    a_cols: tuple
    b_cols: tuple
    knots: np.ndarray
    b_jac_fn: object = None

    @property
    def n_pairs(self) -> int:
        return len(self.knots)

    def pairs(self):
        """(knot, a_cols, b_cols) view for introspection and tests."""
        return [(int(k), self.a_cols[i], self.b_cols[i])
                for i, k in enumerate(self.knots)]

    def b_pattern(self, n_vars: int):
        rows, cols = [], []
        for i in range(self.n_pairs):
            rows.extend([i] * len(self.b_cols[i]))
            cols.extend(np.asarray(self.b_cols[i]).tolist())
        return sp.csr_matrix((np.ones(len(rows), dtype=bool), (rows, cols)),
                             shape=(self.n_pairs, n_vars), dtype=bool)


@dataclass(frozen=True)
class RowMeta:
    """Names rows of a knot-major stacked constraint vector."""

    blocks: tuple[tuple[str, int, int], ...]  # (family, offset-in-knot, width)
    rows_per_knot: int
    n_knots: int

    def rows_of(self, family: str) -> np.ndarray:
        for fam, off, width in self.blocks:
            if fam == family:
                base = np.arange(self.n_knots) * self.rows_per_knot + off
                return (base[:, None] + np.arange(width)).ravel()
        raise KeyError(family)

    def describe(self, row: int) -> tuple[str, int]:
        knot, within = divmod(row, self.rows_per_knot)
        for fam, off, width in self.blocks:
            if off <= within < off + width:
                return fam, knot
        raise IndexError(row)


@dataclass
class NlpProblem:
    """A constrained program: objective, c_E(z) = 0, c_I(z) >= 0, bounds,
    and relaxable complementarity pairs."""

    n_vars: int
    objective: object
    lb: np.ndarray
    ub: np.ndarray
    gradient: object = None
    hess_gn: object = None          # constant Gauss-Newton model, sparse
    eq_fn: object = None
    eq_pattern: object = None       # scipy.sparse bool (m_E x n)
    eq_meta: RowMeta | None = None
    ineq_fn: object = None
    ineq_pattern: object = None
    ineq_meta: RowMeta | None = None
    compl: list = field(default_factory=list)
    z0: np.ndarray | None = None
    layout: Layout | None = None
    name: str = "nlp"

    @property
    def m_eq(self) -> int:
        return 0 if self.eq_pattern is None else self.eq_pattern.shape[0]

    @property
    def m_ineq_base(self) -> int:
        return 0 if self.ineq_pattern is None else self.ineq_pattern.shape[0]

    def eq(self, z: np.ndarray) -> np.ndarray:
        return np.zeros(0) if self.eq_fn is None else self.eq_fn(z)

    def ineq_base(self, z: np.ndarray) -> np.ndarray:
        return np.zeros(0) if self.ineq_fn is None else self.ineq_fn(z)

    def product_values(self, z: np.ndarray) -> list[tuple["PairGroup", np.ndarray]]:
        return [(g, g.a_fn(z) * g.b_fn(z)) for g in self.compl]

    def describe_eq_row(self, row: int) -> str:
        if self.eq_meta is not None:
            fam, knot = self.eq_meta.describe(row)
            return f"{fam}[knot {knot}]"
        return f"eq[{row}]"

    def describe_ineq_row(self, row: int) -> str:
        if row < self.m_ineq_base and self.ineq_meta is not None:
            fam, knot = self.ineq_meta.describe(row)
            return f"{fam}[knot {knot}]"
        if row >= self.m_ineq_base:
            off = row - self.m_ineq_base
            for g in self.compl:
                width = g.n_pairs * (2 if g.two_sided else 1)
                if off < width:
                    return f"{g.name}[knot {int(g.knots[off % g.n_pairs])}]"
                off -= width
        return f"ineq[{row}]"


# -- shared builders ----------------------------------------------------------

def _variable_bounds(model: LegModel, terrain: Terrain, layout: Layout,
                     phase: int, force_factor: float) -> tuple[np.ndarray, np.ndarray]:
    lb = np.full(layout.n_vars, -np.inf)
    ub = np.full(layout.n_vars, np.inf)
    lam_max = force_factor * model.total_mass * model.gravity
    zero = np.zeros(layout.n_vars)
    q_lb = np.empty(model.n)
    q_ub = np.empty(model.n)
    if model.base_mode == "slider":
        q_lb[0], q_ub[0] = BASE_POS_BOUND
    else:
        q_lb[0], q_ub[0] = -COM_BOUND, COM_BOUND
        q_lb[1], q_ub[1] = BASE_POS_BOUND
        q_lb[2], q_ub[2] = BASE_PITCH_BOUND
    q_lb[model.n_b:] = model.joint_pos_lower
    q_ub[model.n_b:] = model.joint_pos_upper
    qd_lb = np.full(model.n, -BASE_VEL_BOUND)
    qd_ub = np.full(model.n, BASE_VEL_BOUND)
    qd_lb[model.n_b:] = [-v for v in model.joint_vel_limit]
    qd_ub[model.n_b:] = model.joint_vel_limit

    def set_field(name, lo, hi):
        L = layout.view(lb, name)
        U = layout.view(ub, name)
        L[:] = lo
        U[:] = hi

    set_field("q", q_lb, q_ub)
    set_field("qd", qd_lb, qd_ub)
    set_field("lam", [-lam_max, 0.0], [lam_max, lam_max])
    if phase == 1:
        set_field("r", -COM_BOUND, COM_BOUND)
        set_field("rd", -COM_VEL_BOUND, COM_VEL_BOUND)
        set_field("hc", -HC_BOUND, HC_BOUND)
        set_field("hcd", -HCD_BOUND, HCD_BOUND)
        set_field("x", [terrain.x_min, -1.0], [terrain.x_max, BASE_POS_BOUND[1]])
    else:
        set_field("tau", [-t for t in model.joint_effort_limit],
                  model.joint_effort_limit)
    del zero
    return lb, ub


def _objective_terms(model: LegModel, task: TaskSpec, layout: Layout,
                     with_effort: bool):
    S = task.feature_matrix(model)
    Qw = task.feature_weights()
    W_star = task.feature_targets(model)
    kw = task.knot_weights()
    h = task.h
    R = task.weight_effort
    N = task.N

    def objective(z):
        q = layout.view(z, "q")
        err = q @ S.T - W_star
        cost = h * float(np.sum(kw * np.sum(err * err * Qw, axis=1)))
        if with_effort:
            tau = layout.view(z, "tau")
            cost += h * R * float(np.sum(tau * tau))
        return cost

    def gradient(z):
        g = np.zeros_like(z)
        q = layout.view(z, "q")
        err = q @ S.T - W_star
        layout.view(g, "q")[:] = 2.0 * h * (kw[:, None] * (err * Qw)) @ S
        if with_effort:
            tau = layout.view(z, "tau")
            layout.view(g, "tau")[:] = 2.0 * h * R * tau
        return g

    # constant block-diagonal objective Hessian (the features are linear)
    rows, cols, vals = [], [], []
    Hq = 2.0 * h * (S.T * Qw) @ S
    for k in range(N):
        idx = layout.indices("q", k)
        for a in range(model.n):
            for b in range(model.n):
                if Hq[a, b] != 0.0:
                    rows.append(idx[a])
                    cols.append(idx[b])
                    vals.append(kw[k] * Hq[a, b])
        if with_effort:
            for i in layout.indices("tau", k):
                rows.append(i)
                cols.append(i)
                vals.append(2.0 * h * R)
    hess = sp.csc_matrix((vals, (rows, cols)),
                         shape=(layout.n_vars, layout.n_vars))
    return objective, gradient, hess


def _build_pattern(layout: Layout, blocks) -> tuple[sp.csr_matrix, RowMeta]:
    """blocks: (family, width, deps) with deps = [(field, lag, component)].

    Rows with lag -1 at knot 0 simply skip those columns (they reference
    the fixed initial state).
    """
    N = layout.n_knots
    rpk = sum(w for _, w, _ in blocks)
    rows, cols = [], []
    meta_blocks = []
    off = 0
    for fam, w, _ in blocks:
        meta_blocks.append((fam, off, w))
        off += w
    for k in range(N):
        off = 0
        for fam, w, deps in blocks:
            colset = []
            for fld, lag, comp in deps:
                kk = k + lag
                if kk < 0:
                    continue
                colset.append(layout.indices(fld, kk, comp))
            if colset:
                cset = np.unique(np.concatenate(colset))
                for i in range(w):
                    r = k * rpk + off + i
                    rows.extend([r] * len(cset))
                    cols.extend(cset.tolist())
            off += w
    pat = sp.csr_matrix((np.ones(len(rows), dtype=bool), (rows, cols)),
                        shape=(N * rpk, layout.n_vars), dtype=bool)
    return pat, RowMeta(tuple(meta_blocks), rpk, N)


def _initial_centroidal_state(model: LegModel, task: TaskSpec):
    q0, qd0 = task.q0, task.qd0
    r0 = dyn.com_position(model, q0)
    rd0 = dyn.com_velocity(model, q0, qd0)
    A0 = dyn.centroidal_momentum_matrix(model, q0)
    hc0 = float(A0[2] @ qd0)
    x0 = dyn.forward_kinematics(model, q0)
    return r0, rd0, hc0, x0


def _check_initial_state(model: LegModel, terrain: Terrain, task: TaskSpec):
    if task.q0.shape != (model.n,) or task.qd0.shape != (model.n,):
        raise DimensionError(
            f"initial state dimensioned {task.q0.shape}/{task.qd0.shape}, "
            f"expected ({model.n},)")
    phi0 = float(terrain.signed_distance(dyn.forward_kinematics(model, task.q0)))
    if phi0 < -1e-9:
        raise InfeasibleTaskError(
            f"initial foot position penetrates the terrain (phi = {phi0:.3e})")
    reach = model.l1 + model.l2
    if terrain.x_min > -reach or terrain.x_max < reach:
        raise ConfigError(
            "terrain must cover the leg's reachable x-range "
            f"[-{reach}, {reach}]")


# -- phase 1: centroidal program ----------------------------------------------

def transcribe_centroidal(model: LegModel, terrain: Terrain,
                          task: TaskSpec) -> NlpProblem:
    _check_initial_state(model, terrain, task)
    N, h = task.N, task.h
    layout = phase1_layout(model, N)
    n = model.n
    m = model.total_mass
    g_vec = np.array([0.0, -model.gravity])
    slider = model.base_mode == "slider"
    r0, rd0, hc0, x0 = _initial_centroidal_state(model, task)
    q0, qd0 = task.q0, task.qd0

    def eq_fn(z):
        q = layout.view(z, "q")
        qd = layout.view(z, "qd")
        r = layout.view(z, "r")
        rd = layout.view(z, "rd")
        hc = layout.view(z, "hc")[:, 0]
        hcd = layout.view(z, "hcd")[:, 0]
        x = layout.view(z, "x")
        lam = layout.view(z, "lam")
        q_prev = np.vstack([q0[None, :], q[:-1]])
        r_prev = np.vstack([r0[None, :], r[:-1]])
        rd_prev = np.vstack([rd0[None, :], rd[:-1]])
        hc_prev = np.concatenate([[hc0], hc[:-1]])
        fk = dyn.forward_kinematics(model, q)
        com = dyn.com_position(model, q)
        A = dyn.centroidal_momentum_matrix(model, q)
        # defect rows are scaled to rate units (1/h) and the momentum rows
        # additionally by mass, which keeps multipliers near cost scale
        mom = (rd - rd_prev) / h - (lam / m + g_vec)
        parts = [
            (r_prev - r) / h + rd,
            ((hc_prev - hc) / h + hcd)[:, None],
        ]
        if slider:
            parts.append(mom[:, 1:2])
        else:
            parts.append(mom)
            ang = hcd - ((x - r)[:, 0] * lam[:, 1] - (x - r)[:, 1] * lam[:, 0])
            parts.append(ang[:, None] / m)
        parts += [
            x - fk,
            r - com,
            (hc - np.einsum("kj,kj->k", A[:, 2, :], qd))[:, None],
            (q_prev - q) / h + qd,
        ]
        return np.concatenate(parts, axis=1).ravel()

    eq_blocks = [
        ("integration_r", 2, [("r", 0, None), ("rd", 0, None), ("r", -1, None)]),
        ("integration_hc", 1, [("hc", 0, None), ("hcd", 0, None), ("hc", -1, None)]),
        # z-momentum only on the rail; x and angular rows need the reaction
        ("momentum", 1 if slider else 2,
         [("rd", 0, None), ("rd", -1, None), ("lam", 0, None)]),
    ]
    if not slider:
        eq_blocks.append(
            ("angular_rate", 1,
             [("hcd", 0, None), ("x", 0, None), ("r", 0, None), ("lam", 0, None)]))
    eq_blocks += [
        ("contact_position", 2, [("x", 0, None), ("q", 0, None)]),
        ("com_coupling", 2, [("r", 0, None), ("q", 0, None)]),
        ("hc_coupling", 1, [("hc", 0, None), ("q", 0, None), ("qd", 0, None)]),
        ("integration_q", n, [("q", 0, None), ("qd", 0, None), ("q", -1, None)]),
    ]
    eq_pattern, eq_meta = _build_pattern(layout, eq_blocks)

    def ineq_fn(z):
        q = layout.view(z, "q")
        phi = terrain.signed_distance(dyn.forward_kinematics(model, q))
        return GAP_ROW_SCALE * phi

    ineq_pattern, ineq_meta = _build_pattern(
        layout, [("gap", 1, [("q", 0, None)])])

    lam_n_cols = tuple(layout.indices("lam", k, 1) for k in range(N))
    gap_group = PairGroup(
        name="gap_force", two_sided=False, scale=PROD_ROW_SCALE,
        a_fn=lambda z: layout.view(z, "lam")[:, 1].copy(),
        b_fn=lambda z: terrain.signed_distance(
            dyn.forward_kinematics(model, layout.view(z, "q"))),
        a_cols=lam_n_cols,
        b_cols=tuple(layout.indices("q", k) for k in range(N)),
        knots=np.arange(N))

    def slip_b(z):
        xt = layout.view(z, "x")[:, 0]
        return xt - np.concatenate([[x0[0]], xt[:-1]])

    slip_cols = tuple(
        np.unique(np.concatenate(
            [layout.indices("x", k, 0)] +
            ([layout.indices("x", k - 1, 0)] if k > 0 else [])))
        for k in range(N))
    rows, cols, vals = [], [], []
    for k in range(N):
        rows.append(k)
        cols.append(layout.indices("x", k, 0)[0])
        vals.append(1.0)
        if k > 0:
            rows.append(k)
            cols.append(layout.indices("x", k - 1, 0)[0])
            vals.append(-1.0)
    slip_jac = sp.csr_matrix((vals, (rows, cols)), shape=(N, layout.n_vars))
    slip_group = PairGroup(
        name="slip_force", two_sided=True, scale=PROD_ROW_SCALE,
        a_fn=lambda z: layout.view(z, "lam")[:, 1].copy(),
        b_fn=slip_b,
        a_cols=lam_n_cols,
        b_cols=slip_cols,
        knots=np.arange(N),
        b_jac_fn=lambda z: slip_jac)

    objective, gradient, hess = _objective_terms(model, task, layout,
                                                 with_effort=False)
    lb, ub = _variable_bounds(model, terrain, layout, phase=1,
                              force_factor=task.contact_force_factor)
    z0 = phase1_initial_guess(model, terrain, task)
    return NlpProblem(
        n_vars=layout.n_vars, objective=objective, gradient=gradient,
        hess_gn=hess, eq_fn=eq_fn, eq_pattern=eq_pattern, eq_meta=eq_meta,
        ineq_fn=ineq_fn, ineq_pattern=ineq_pattern, ineq_meta=ineq_meta,
        compl=[gap_group, slip_group], lb=lb, ub=ub, z0=z0, layout=layout,
        name="centroidal")


# -- phase 2: full-dynamics program ---------------------------------------------

def transcribe_full(model: LegModel, terrain: Terrain, task: TaskSpec,
                    warm_start: KnotTrajectory | None = None) -> NlpProblem:
    _check_initial_state(model, terrain, task)
    N, h = task.N, task.h
    layout = phase2_layout(model, N)
    n = model.n
    q0, qd0 = task.q0, task.qd0
    B = dyn.actuation_matrix(model)
    tau_step = 1.0 if task.paper_exact_dynamics_rows else h
    x0 = dyn.forward_kinematics(model, q0)

    def eq_fn(z):
        q = layout.view(z, "q")
        qd = layout.view(z, "qd")
        tau = layout.view(z, "tau")
        lam = layout.view(z, "lam")
        q_prev = np.vstack([q0[None, :], q[:-1]])
        qd_prev = np.vstack([qd0[None, :], qd[:-1]])
        H = dyn.mass_matrix(model, q)
        c = dyn.bias_forces(model, q, qd)
        J = dyn.foot_jacobian(model, q)
        # rows scaled by 1/(h m): same zero set in force units per unit mass
        m = model.total_mass
        dyn_rows = (np.einsum("kij,kj->ki", H, qd - qd_prev) / (h * m)
                    + (c - np.einsum("kij,ki->kj", J, lam)) / m
                    - (tau_step / h) * (tau @ B.T) / m)
        parts = [(q_prev - q) / h + qd, dyn_rows]
        return np.concatenate(parts, axis=1).ravel()

    eq_blocks = [
        ("integration_q", n, [("q", 0, None), ("qd", 0, None), ("q", -1, None)]),
        ("dynamics", n, [("q", 0, None), ("qd", 0, None), ("qd", -1, None),
                         ("tau", 0, None), ("lam", 0, None)]),
    ]
    eq_pattern, eq_meta = _build_pattern(layout, eq_blocks)

    def ineq_fn(z):
        q = layout.view(z, "q")
        phi = terrain.signed_distance(dyn.forward_kinematics(model, q))
        return GAP_ROW_SCALE * phi

    ineq_pattern, ineq_meta = _build_pattern(
        layout, [("gap", 1, [("q", 0, None)])])

    lam_n_cols = tuple(layout.indices("lam", k, 1) for k in range(N))
    gap_group = PairGroup(
        name="gap_force", two_sided=False, scale=PROD_ROW_SCALE,
        a_fn=lambda z: layout.view(z, "lam")[:, 1].copy(),
        b_fn=lambda z: terrain.signed_distance(
            dyn.forward_kinematics(model, layout.view(z, "q"))),
        a_cols=lam_n_cols,
        b_cols=tuple(layout.indices("q", k) for k in range(N)),
        knots=np.arange(N))

    def slip_b(z):
        xt = dyn.forward_kinematics(model, layout.view(z, "q"))[:, 0]
        return xt - np.concatenate([[x0[0]], xt[:-1]])

    slip_cols = tuple(
        np.unique(np.concatenate(
            [layout.indices("q", k)] +
            ([layout.indices("q", k - 1)] if k > 0 else [])))
        for k in range(N))
    slip_group = PairGroup(
        name="slip_force", two_sided=True, scale=PROD_ROW_SCALE,
        a_fn=lambda z: layout.view(z, "lam")[:, 1].copy(),
        b_fn=slip_b,
        a_cols=lam_n_cols,
        b_cols=slip_cols,
        knots=np.arange(N))

    objective, gradient, hess = _objective_terms(model, task, layout,
                                                 with_effort=True)
    lb, ub = _variable_bounds(model, terrain, layout, phase=2,
                              force_factor=task.contact_force_factor)
    if warm_start is not None:
        z0 = warm_start_vector(model, task, warm_start)
    else:
        z0 = phase2_initial_guess(model, terrain, task)
    return NlpProblem(
        n_vars=layout.n_vars, objective=objective, gradient=gradient,
        hess_gn=hess, eq_fn=eq_fn, eq_pattern=eq_pattern, eq_meta=eq_meta,
        ineq_fn=ineq_fn, ineq_pattern=ineq_pattern, ineq_meta=ineq_meta,
        compl=[gap_group, slip_group], lb=lb, ub=ub, z0=z0, layout=layout,
        name="full")


# -- initial guesses and warm starts ---------------------------------------------

def _static_tau(model: LegModel, q: np.ndarray, lam: np.ndarray) -> np.ndarray:
    b = dyn.inverse_dynamics(model, q, np.zeros_like(q), np.zeros_like(q), lam)
    return b[..., model.n_b:]


def static_equilibrium_trajectory(model: LegModel, terrain: Terrain,
                                  task: TaskSpec, phase: int) -> KnotTrajectory:
    """The all-stationary trajectory: a feasible point of both phases when
    the initial state rests on the ground."""
    N = task.N
    q = np.tile(task.q0, (N, 1))
    qd = np.zeros((N, model.n))
    lam = np.tile([0.0, model.total_mass * model.gravity], (N, 1))
    if phase == 1:
        r0, rd0, hc0, x0 = _initial_centroidal_state(model, task)
        return KnotTrajectory(
            q=q, qd=qd, lam=lam,
            r=np.tile(r0, (N, 1)), rd=np.zeros((N, 2)),
            hc=np.full(N, hc0), hcd=np.zeros(N),
            x=np.tile(x0, (N, 1)))
    tau = np.tile(_static_tau(model, task.q0, lam[0]), (N, 1))
    return KnotTrajectory(q=q, qd=qd, lam=lam, tau=tau)


def _reference_guess(model: LegModel, terrain: Terrain, task: TaskSpec):
    """Deterministic initial trajectory that tracks the task's feature
    targets: the base coordinate follows the per-knot trunk target, the
    joints hold their targets, and contact force is applied only where
    the resulting foot pose touches the ground.

    For a stationary target this reduces to the constant-configuration
    stance at q0 with lambda_n = m g.  For reach-profile tasks whose late
    targets are kinematically out of reach it seeds an airborne tail,
    which is what lets the homotopy land in a ballistic solution instead
    of the stand-tall local optimum.
    """
    N, h = task.N, task.h
    W = task.feature_targets(model)

    def ramp(targets, start, rate):
        """Rate-limit toward the targets, then smooth the corners."""
        out = targets.copy()
        prev = float(start)
        dmax = rate * h
        for k in range(N):
            out[k] = np.clip(out[k], prev - dmax, prev + dmax)
            prev = out[k]
        kernel = np.array([0.25, 0.5, 0.25])
        for _ in range(2):
            padded = np.concatenate([[out[0]], out, [out[-1]]])
            out = np.convolve(padded, kernel, mode="valid")
        return out

    zi = model.base_height_index()
    q = np.tile(task.q0, (N, 1))
    q[:, zi] = ramp(W[:, 0], task.q0[zi], rate=2.0)
    if task.feature_map == "trunk_joints":
        for j in range(model.n_q):
            q[:, model.n_b + j] = ramp(W[:, 1 + j], task.q0[model.n_b + j],
                                       rate=6.0)
    qd = np.diff(np.vstack([task.q0[None, :], q]), axis=0) / h
    vmax = np.concatenate([np.full(model.n_b, BASE_VEL_BOUND),
                           model.joint_vel_limit])
    qd = np.clip(qd, -0.9 * vmax, 0.9 * vmax)
    feet = dyn.forward_kinematics(model, q)
    phi = terrain.signed_distance(feet)
    lam = np.zeros((N, 2))
    lam[:, 1] = np.where(phi <= 1e-6, model.total_mass * model.gravity, 0.0)
    return q, qd, feet, lam


def phase1_initial_guess(model: LegModel, terrain: Terrain,
                         task: TaskSpec) -> np.ndarray:
    layout = phase1_layout(model, task.N)
    q, qd, feet, lam = _reference_guess(model, terrain, task)
    r = dyn.com_position(model, q)
    r_prev = np.vstack([dyn.com_position(model, task.q0)[None, :], r[:-1]])
    rd = (r - r_prev) / task.h
    A = dyn.centroidal_momentum_matrix(model, q)
    hc = np.einsum("kj,kj->k", A[:, 2, :], qd)
    hc0 = float(dyn.centroidal_momentum_matrix(model, task.q0)[2] @ task.qd0)
    hcd = (hc - np.concatenate([[hc0], hc[:-1]])) / task.h
    traj = KnotTrajectory(q=q, qd=qd, lam=lam, r=r, rd=rd, hc=hc, hcd=hcd,
                          x=feet)
    z = layout.pack(traj)
    rng = np.random.default_rng(task.seed)
    return z + rng.uniform(-1e-3, 1e-3, z.shape)


def phase2_initial_guess(model: LegModel, terrain: Terrain,
                         task: TaskSpec) -> np.ndarray:
    layout = phase2_layout(model, task.N)
    q, qd, feet, lam = _reference_guess(model, terrain, task)
    tau = _static_tau(model, q, lam)
    lo = np.array([-t + 1e-3 for t in model.joint_effort_limit])
    hi = np.array([t - 1e-3 for t in model.joint_effort_limit])
    tau = np.clip(tau, lo, hi)
    traj = KnotTrajectory(q=q, qd=qd, lam=lam, tau=tau)
    z = layout.pack(traj)
    rng = np.random.default_rng(task.seed)
    return z + rng.uniform(-1e-3, 1e-3, z.shape)


def warm_start_vector(model: LegModel, task: TaskSpec,
                      warm: KnotTrajectory) -> np.ndarray:
    """Map a phase-1 trajectory into a phase-2 starting point.

    q, qd and lam copy over directly; efforts come from inverse dynamics
    of the phase-1 motion with its contact forces, with accelerations
    from backward differences of qd.
    """
    if warm.n_knots != task.N:
        raise DimensionError(
            f"warm start has {warm.n_knots} knots, task wants {task.N}")
    if warm.q.shape[1] != model.n:
        raise DimensionError(
            f"warm start configuration dim {warm.q.shape[1]} != {model.n}")
    layout = phase2_layout(model, task.N)
    qd_prev = np.vstack([task.qd0[None, :], warm.qd[:-1]])
    qdd = (warm.qd - qd_prev) / task.h
    lam = warm.lam if warm.lam is not None else np.zeros((task.N, 2))
    b = dyn.inverse_dynamics(model, warm.q, warm.qd, qdd, lam)
    tau = b[:, model.n_b:]
    tau = np.clip(tau, [-t + 1e-6 for t in model.joint_effort_limit],
                  [t - 1e-6 for t in model.joint_effort_limit])
    traj = KnotTrajectory(q=warm.q.copy(), qd=warm.qd.copy(),
                          lam=lam.copy(), tau=tau)
    return layout.pack(traj)
