"""Primal-dual interior-point solver with a complementarity homotopy.

The outer loop drives the barrier parameter mu and the complementarity
relaxation delta = theta * mu (floored) down together; at each stage the
complementarity pairs appear as inequality rows ``scale * (delta - a*b)
>= 0`` (two rows when the product is sign-free).  The inner loop takes
primal-dual Newton steps on the barrier KKT system with a regularization
escalation loop standing in for inertia control, and an Armijo
backtracking line search on an l1 merit function.

Inequalities get slacks and the slacks join the variable vector with a
zero lower bound, so the whole bound/barrier machinery is uniform:

    min f(z)  s.t.  c_E(z) = 0,  c_I(z) - s = 0,  (z, s) in box.

Multipliers are reported in the conventional sign: stationarity is
grad f + J_E^T y_eq - J_I^T y_ineq - z_lb + z_ub with y_ineq >= 0.

Constraint Jacobians come from colored central finite differences over
the declared sparsity pattern; problems may register an analytic
objective gradient and a constant Gauss-Newton objective Hessian.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, EvaluatorError
from .fdjac import color_columns, fd_gradient, fd_jacobian
from .transcription import NlpProblem

_BIG = 1e20


@dataclass(frozen=True)
class SolverOptions:
    kkt_tol: float = 1e-6
    feas_tol: float = 1e-5  # cap on constraint violation for 'converged'
    max_iterations: int = 3000
    max_stage_iterations: int = 150
    mu0: float = 1.0
    mu_shrink: float = 0.2
    mu_min: float = 1e-9
    comp_theta: float = 10.0
    comp_delta_floor: float = 1e-7
    fd_step: float = 1e-6
    hessian: str = "damped_bfgs"  # or "gauss_newton"
    ls_backtrack: float = 0.5
    armijo_c1: float = 1e-4
    max_ls_steps: int = 30
    reg_floor: float = 1e-8
    reg_max: float = 1e10
    ftb_tau: float = 0.995
    kappa_eps: float = 10.0
    merit_nu0: float = 1.0
    merit_nu_factor: float = 1.1
    merit_nu_offset: float = 0.01
    log_path: str | None = None
    debug_hook: object = None

    def __post_init__(self):
        for name in ("kkt_tol", "mu0", "mu_min", "comp_theta",
                     "comp_delta_floor", "fd_step", "reg_floor"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.mu_shrink < 1:
            raise ConfigError("mu_shrink must lie in (0, 1)")
        if self.hessian not in ("damped_bfgs", "gauss_newton"):
            raise ConfigError(f"unknown hessian mode {self.hessian!r}")


@dataclass
class Multipliers:
    y_eq: np.ndarray
    y_ineq: np.ndarray      # >= 0, for c_I(z) >= 0 rows at the given delta
    z_lb: np.ndarray
    z_ub: np.ndarray
    delta: float = 0.0


@dataclass
class StageTrace:
    mu: float
    delta: float
    iterations: int
    stationarity: float
    feasibility: float
    complementarity: float


@dataclass
class SolveReport:
    status: str
    cost: float
    kkt_stationarity: float
    kkt_feasibility: float
    kkt_complementarity: float
    iterations: int
    wall_time: float
    stages: list[StageTrace] = field(default_factory=list)
    z: np.ndarray | None = None
    multipliers: Multipliers | None = None
    clamped_start: bool = False
    message: str = ""
    counters: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


# -- materialized inequality set ------------------------------------------------

class _Stage:
    """Inequality stack of a problem with products relaxed at delta."""

    def __init__(self, problem: NlpProblem):
        self.problem = problem
        n = problem.n_vars
        pats = []
        if problem.ineq_pattern is not None:
            pats.append(sp.csr_matrix(problem.ineq_pattern, dtype=bool))
        for g in problem.compl:
            rows, cols = [], []
            for i in range(g.n_pairs):
                cset = np.unique(np.concatenate([g.a_cols[i], g.b_cols[i]]))
                rows.extend([i] * len(cset))
                cols.extend(cset.tolist())
            block = sp.csr_matrix(
                (np.ones(len(rows), dtype=bool), (rows, cols)),
                shape=(g.n_pairs, n), dtype=bool)
            pats.append(block)
            if g.two_sided:
                pats.append(block.copy())
        if pats:
            self.ineq_pattern = sp.vstack(pats, format="csr")
        else:
            self.ineq_pattern = sp.csr_matrix((0, n), dtype=bool)
        self.m_ineq = self.ineq_pattern.shape[0]
        self.eq_pattern = (sp.csr_matrix(problem.eq_pattern, dtype=bool)
                           if problem.eq_pattern is not None
                           else sp.csr_matrix((0, n), dtype=bool))
        self.m_eq = self.eq_pattern.shape[0]
        self.eq_groups = color_columns(self.eq_pattern) if self.m_eq else []
        self.ineq_groups = color_columns(self.ineq_pattern) if self.m_ineq else []
        # bilinear-curvature helpers per pair group (single-variable a only)
        self.b_patterns = []
        self.b_groups = []
        self.a_select = []
        for g in problem.compl:
            if all(len(c) == 1 for c in g.a_cols):
                pat = g.b_pattern(n)
                self.b_patterns.append(pat)
                self.b_groups.append(color_columns(pat) if g.b_jac_fn is None
                                     else None)
                a_idx = np.array([c[0] for c in g.a_cols])
                self.a_select.append(sp.csr_matrix(
                    (np.ones(g.n_pairs), (np.arange(g.n_pairs), a_idx)),
                    shape=(g.n_pairs, n)))
            else:
                self.b_patterns.append(None)
                self.b_groups.append(None)
                self.a_select.append(None)

    def ineq(self, z: np.ndarray, delta: float) -> np.ndarray:
        p = self.problem
        parts = [p.ineq_base(z)]
        for g in p.compl:
            prod = g.a_fn(z) * g.b_fn(z)
            parts.append(g.scale * (delta - prod))
            if g.two_sided:
                parts.append(g.scale * (delta + prod))
        return np.concatenate(parts) if parts else np.zeros(0)

    def eq(self, z: np.ndarray) -> np.ndarray:
        return self.problem.eq(z)

    def pair_curvature(self, z: np.ndarray, y_ineq_internal: np.ndarray,
                       step: float):
        """Lagrangian curvature of the bilinear product rows: for a row
        scale*(delta - a b) with internal multiplier y the contribution is
        -scale*y*(grad a grad b^T + grad b grad a^T); the a*hess(b) term is
        dropped.  Returns an n x n sparse matrix (or None)."""
        p = self.problem
        n = p.n_vars
        off = p.m_ineq_base
        total = None
        for gi, g in enumerate(p.compl):
            K = g.n_pairs
            y_minus = y_ineq_internal[off:off + K]
            off += K
            y_plus = np.zeros(K)
            if g.two_sided:
                y_plus = y_ineq_internal[off:off + K]
                off += K
            if self.a_select[gi] is None:
                continue
            coeff = g.scale * (y_plus - y_minus)
            if not np.any(coeff):
                continue
            if g.b_jac_fn is not None:
                Bj = sp.csr_matrix(g.b_jac_fn(z))
            else:
                Bj = fd_jacobian(g.b_fn, z, self.b_patterns[gi], step,
                                 self.b_groups[gi])
            M = self.a_select[gi].T @ sp.diags(coeff) @ Bj
            contrib = M + M.T
            total = contrib if total is None else total + contrib
        return total


def _stage_of(problem: NlpProblem) -> _Stage:
    cached = getattr(problem, "_stage_cache", None)
    if cached is None:
        cached = _Stage(problem)
        problem._stage_cache = cached
    return cached


# -- public operations -----------------------------------------------------------

def sparse_jacobian(problem: NlpProblem, point, delta: float = 0.0,
                    step: float = 1e-6) -> sp.coo_matrix:
    """Jacobian of the stacked constraints [c_E; c_I(delta)] in triplet
    form, probed only on the declared sparsity pattern."""
    stage = _stage_of(problem)
    z = np.asarray(point, dtype=float)
    blocks = []
    if stage.m_eq:
        blocks.append(fd_jacobian(stage.eq, z, stage.eq_pattern, step,
                                  stage.eq_groups))
    if stage.m_ineq:
        blocks.append(fd_jacobian(lambda v: stage.ineq(v, delta), z,
                                  stage.ineq_pattern, step, stage.ineq_groups))
    if not blocks:
        return sp.coo_matrix((0, problem.n_vars))
    return sp.vstack(blocks, format="coo")


def kkt_residual(problem: NlpProblem, point, multipliers: Multipliers,
                 step: float = 1e-6):
    """(stationarity, feasibility, complementarity) max-norms at a point.

    Uses the conventional first-order conditions of
    min f s.t. c_E = 0, c_I >= 0, lb <= z <= ub with nonnegative
    inequality and bound multipliers.
    """
    stage = _stage_of(problem)
    z = np.asarray(point, dtype=float)
    mult = multipliers
    grad = (problem.gradient(z) if problem.gradient is not None
            else fd_gradient(problem.objective, z, step))
    stat_vec = grad.copy()
    feas_terms = [0.0]
    comp_terms = [0.0]
    if stage.m_eq:
        cE = stage.eq(z)
        JE = fd_jacobian(stage.eq, z, stage.eq_pattern, step, stage.eq_groups)
        stat_vec += JE.T @ mult.y_eq
        feas_terms.append(float(np.abs(cE).max()))
    if stage.m_ineq:
        cI = stage.ineq(z, mult.delta)
        JI = fd_jacobian(lambda v: stage.ineq(v, mult.delta), z,
                         stage.ineq_pattern, step, stage.ineq_groups)
        stat_vec -= JI.T @ mult.y_ineq
        feas_terms.append(float(np.abs(np.minimum(cI, 0.0)).max()))
        comp_terms.append(float(np.abs(cI * mult.y_ineq).max()))
    lb, ub = problem.lb, problem.ub
    fin_l = lb > -_BIG
    fin_u = ub < _BIG
    stat_vec -= np.where(fin_l, mult.z_lb, 0.0)
    stat_vec += np.where(fin_u, mult.z_ub, 0.0)
    feas_terms.append(float(np.abs(np.minimum(z - lb, 0.0)).max()))
    feas_terms.append(float(np.abs(np.minimum(ub - z, 0.0)).max()))
    if np.any(fin_l):
        comp_terms.append(float(np.abs(((z - lb) * mult.z_lb)[fin_l]).max()))
    if np.any(fin_u):
        comp_terms.append(float(np.abs(((ub - z) * mult.z_ub)[fin_u]).max()))
    return (float(np.abs(stat_vec).max()), max(feas_terms), max(comp_terms))


# -- the solver -------------------------------------------------------------------

def solve(problem: NlpProblem, initial_point=None,
          options: SolverOptions | None = None) -> SolveReport:
    opts = options or SolverOptions()
    t_start = time.perf_counter()
    log = open(opts.log_path, "w") if opts.log_path else None
    try:
        return _solve_inner(problem, initial_point, opts, t_start, log)
    except EvaluatorError as exc:
        where = ""
        if exc.constraint_index is not None:
            where = " at " + problem.describe_eq_row(exc.constraint_index)
        return SolveReport(
            status="diverged", cost=np.nan, kkt_stationarity=np.nan,
            kkt_feasibility=np.nan, kkt_complementarity=np.nan,
            iterations=0, wall_time=time.perf_counter() - t_start,
            message=f"evaluator failure{where}: {exc}")
    finally:
        if log:
            log.close()


def _push_inside(z, lb, ub):
    gap = np.where((lb > -_BIG) & (ub < _BIG), ub - lb, np.inf)
    pad_l = np.where(lb > -_BIG,
                     np.minimum(1e-2 * np.maximum(1.0, np.abs(lb)), 1e-2 * gap),
                     0.0)
    pad_u = np.where(ub < _BIG,
                     np.minimum(1e-2 * np.maximum(1.0, np.abs(ub)), 1e-2 * gap),
                     0.0)
    return np.clip(z, lb + pad_l, ub - pad_u)


def _solve_inner(problem: NlpProblem, initial_point, opts: SolverOptions,
                 t_start, log) -> SolveReport:
    stage_info = _stage_of(problem)
    n = problem.n_vars
    mE, mI = stage_info.m_eq, stage_info.m_ineq
    has_pairs = bool(problem.compl)
    z0 = np.asarray(initial_point if initial_point is not None
                    else (problem.z0 if problem.z0 is not None else np.zeros(n)),
                    dtype=float).copy()
    if z0.shape != (n,):
        raise ConfigError(f"initial point has shape {z0.shape}, expected ({n},)")
    z = _push_inside(z0, problem.lb, problem.ub)
    clamped = bool(np.max(np.abs(z - z0)) > 1e-12)

    grad_f = (problem.gradient if problem.gradient is not None
              else lambda v: fd_gradient(problem.objective, v, opts.fd_step))
    if opts.hessian == "gauss_newton" and problem.hess_gn is None:
        raise ConfigError("gauss_newton mode needs a problem Hessian model")

    # stacked variables x = (z, s)
    L = np.concatenate([problem.lb, np.zeros(mI)])
    U = np.concatenate([problem.ub, np.full(mI, np.inf)])
    fin_l = L > -_BIG
    fin_u = U < _BIG
    has_barrier = bool(np.any(fin_l) or np.any(fin_u))

    delta_of = (lambda mu: max(opts.comp_theta * mu, opts.comp_delta_floor)) \
        if has_pairs else (lambda mu: 0.0)

    mu = opts.mu0 if has_barrier else opts.mu_min
    nu = opts.merit_nu0
    B = np.eye(n) if opts.hessian == "damped_bfgs" else None
    y = np.zeros(mE + mI)
    x = np.concatenate([z, np.zeros(mI)])
    # bound duals start on the central path so the barrier curvature is
    # present from the first iteration
    with np.errstate(divide="ignore"):
        zL = np.where(fin_l, np.clip(mu / (x - L), 1e-8, 1e4), 0.0)
        zU = np.where(fin_u, np.clip(mu / (U - x), 1e-8, 1e4), 0.0)
    # Levenberg-style proximal weight, adapted from step quality
    rho_base = 1e-4 if opts.hessian == "gauss_newton" else 0.0
    stages: list[StageTrace] = []
    it_total = 0
    ls_failures = 0
    final_rounds = 0
    counters = {"ls_failures": 0, "soc_accepts": 0, "rho_bumps": 0}
    pending_bfgs = None
    best = None  # (E0, z, mult, cost, stat, feas, comp)

    def eval_all(zv, delta):
        f = problem.objective(zv)
        cE = stage_info.eq(zv) if mE else np.zeros(0)
        cI = stage_info.ineq(zv, delta) if mI else np.zeros(0)
        if not (np.isfinite(f) and np.all(np.isfinite(cE))
                and np.all(np.isfinite(cI))):
            bad_eq = np.flatnonzero(~np.isfinite(cE))
            where = (problem.describe_eq_row(int(bad_eq[0]))
                     if bad_eq.size else "objective or inequality")
            raise EvaluatorError(f"non-finite evaluator output at {where}",
                                 constraint_index=int(bad_eq[0]) if bad_eq.size else None)
        return f, cE, cI

    def jacobians(zv, delta):
        JE = (fd_jacobian(stage_info.eq, zv, stage_info.eq_pattern,
                          opts.fd_step, stage_info.eq_groups)
              if mE else sp.csr_matrix((0, n)))
        JI = (fd_jacobian(lambda v: stage_info.ineq(v, delta), zv,
                          stage_info.ineq_pattern, opts.fd_step,
                          stage_info.ineq_groups)
              if mI else sp.csr_matrix((0, n)))
        return JE, JI

    def floor_violation(zv):
        """True inequality violation at the final relaxation level."""
        if not mI:
            return 0.0
        vals = stage_info.ineq(zv, delta_of(0.0))
        return float(np.abs(np.minimum(vals, 0.0)).max())

    def make_mult(delta):
        return Multipliers(y_eq=y[:mE].copy(), y_ineq=(-y[mE:]).copy(),
                           z_lb=zL[:n].copy(), z_ub=zU[:n].copy(),
                           delta=delta)

    def current_e0(grad, JE, JI, cE, zv):
        gapl = np.where(fin_l, x - L, np.inf)
        gapu = np.where(fin_u, U - x, np.inf)
        stat_vec = np.concatenate([grad, np.zeros(mI)])
        if mE + mI:
            G = _assemble_G(JE, JI, mI)
            stat_vec = stat_vec + G.T @ y
        stat_vec = stat_vec - np.where(fin_l, zL, 0.0) + np.where(fin_u, zU, 0.0)
        sd = max(1.0, (np.abs(y).sum() + zL.sum() + zU.sum())
                 / max(1, mE + mI + fin_l.sum() + fin_u.sum()) / 100.0)
        stat = float(np.abs(stat_vec).max()) / sd
        feas = max(float(np.abs(cE).max()) if mE else 0.0, floor_violation(zv))
        comp_terms = [0.0]
        if np.any(fin_l):
            comp_terms.append(float(np.abs(gapl[fin_l] * zL[fin_l]).max()))
        if np.any(fin_u):
            comp_terms.append(float(np.abs(gapu[fin_u] * zU[fin_u]).max()))
        comp = max(comp_terms) / sd
        return stat, feas, comp

    def probe(grad, JE, JI, cE, zv, delta):
        """Least-squares multiplier estimate; returns a converged bundle
        or None."""
        feas = max(float(np.abs(cE).max()) if mE else 0.0, floor_violation(zv))
        if feas > min(opts.kkt_tol, opts.feas_tol):
            return None
        cI_floor = stage_info.ineq(zv, delta_of(0.0)) if mI else np.zeros(0)
        act_i = np.flatnonzero(cI_floor <= 1e-4) if mI else np.zeros(0, int)
        act_l = np.flatnonzero(fin_l[:n] & (zv - L[:n] <= 1e-4 * (1 + np.abs(zv))))
        act_u = np.flatnonzero(fin_u[:n] & (U[:n] - zv <= 1e-4 * (1 + np.abs(zv))))
        cols = []
        if mE:
            cols.append(JE.T)
        if act_i.size:
            cols.append(-JI[act_i].T)
        if act_l.size:
            cols.append(-sp.csc_matrix(
                (np.ones(act_l.size), (act_l, np.arange(act_l.size))),
                shape=(n, act_l.size)))
        if act_u.size:
            cols.append(sp.csc_matrix(
                (np.ones(act_u.size), (act_u, np.arange(act_u.size))),
                shape=(n, act_u.size)))
        if cols:
            A = sp.hstack(cols, format="csr")
            theta = spla.lsqr(A, -grad, atol=1e-12, btol=1e-12)[0]
        else:
            theta = np.zeros(0)

        def unpack_theta(th):
            off = mE
            y_eq = th[:mE]
            y_in = np.zeros(mI)
            if act_i.size:
                y_in[act_i] = np.maximum(th[off:off + act_i.size], 0.0)
                off += act_i.size
            zlb = np.zeros(n)
            if act_l.size:
                zlb[act_l] = np.maximum(th[off:off + act_l.size], 0.0)
                off += act_l.size
            zub = np.zeros(n)
            if act_u.size:
                zub[act_u] = np.maximum(th[off:off + act_u.size], 0.0)
            return y_eq, y_in, zlb, zub

        def measures(y_eq, y_in, zlb, zub):
            stat_vec = grad.copy()
            if mE:
                stat_vec = stat_vec + JE.T @ y_eq
            if mI:
                stat_vec = stat_vec - JI.T @ y_in
            stat_vec = stat_vec - zlb + zub
            stat = float(np.abs(stat_vec).max())
            comp = 0.0
            if mI:
                comp = max(comp, float(np.abs(cI_floor * y_in).max()))
            if np.any(fin_l[:n]):
                comp = max(comp, float(np.abs((zv - L[:n]) * zlb).max()))
            if np.any(fin_u[:n]):
                comp = max(comp, float(np.abs((U[:n] - zv) * zub).max()))
            return stat, comp

        y_eq, y_in, zlb, zub = unpack_theta(theta)
        stat, comp = measures(y_eq, y_in, zlb, zub)
        resid_free = (float(np.abs(A @ theta + grad).max()) if cols else stat)
        if max(stat, comp) > opts.kkt_tol and cols \
                and resid_free <= opts.kkt_tol:
            # the free-sign fit is good but clipping spoiled it: redo the
            # fit with the sign constraints imposed
            from scipy.optimize import lsq_linear
            lo = np.concatenate([np.full(mE, -np.inf),
                                 np.zeros(theta.size - mE)])
            res = lsq_linear(A, -grad, bounds=(lo, np.full(theta.size, np.inf)),
                             tol=1e-12, max_iter=200)
            y_eq, y_in, zlb, zub = unpack_theta(res.x)
            stat, comp = measures(y_eq, y_in, zlb, zub)
        if max(stat, feas, comp) <= opts.kkt_tol:
            return (Multipliers(y_eq=y_eq, y_ineq=y_in, z_lb=zlb, z_ub=zub,
                                delta=delta_of(0.0)), stat, feas, comp)
        return None

    def finish(status, zv, mult, stat, feas, comp, message=""):
        return SolveReport(
            status=status, cost=float(problem.objective(zv)),
            kkt_stationarity=stat, kkt_feasibility=feas,
            kkt_complementarity=comp, iterations=it_total,
            wall_time=time.perf_counter() - t_start, stages=stages,
            z=zv.copy(), multipliers=mult, clamped_start=clamped,
            message=message, counters=dict(counters))

    while True:
        delta = delta_of(mu)
        # (re)initialize slacks for the new relaxation level; curvature
        # estimates from the previous barrier subproblem rarely transfer
        if mI:
            cI_now = stage_info.ineq(z, delta)
            x[n:] = np.maximum(cI_now, np.maximum(1e-2, 1e-2 * np.abs(cI_now)))
            zL[n:] = np.clip(mu / x[n:], 1e-10, 1e10)
        if B is not None:
            B[:] = np.eye(n)
            pending_bfgs = None
        stage_iters = 0
        stat_l = feas_l = comp_l = np.inf
        while True:
            f, cE, cI = eval_all(z, delta)
            JE, JI = jacobians(z, delta)
            grad = grad_f(z)

            # convergence probes (true KKT at the floor relaxation)
            stat0, feas0, comp0 = current_e0(grad, JE, JI, cE, z)
            feas_ok = feas0 <= min(opts.kkt_tol, opts.feas_tol)
            if max(stat0, comp0) <= opts.kkt_tol and feas_ok:
                stages.append(StageTrace(mu, delta, stage_iters, stat0, feas0, comp0))
                return finish("converged", z, make_mult(delta_of(0.0)),
                              stat0, feas0, comp0)
            probed = probe(grad, JE, JI, cE, z, delta)
            if probed is not None:
                mult, stat_p, feas_p, comp_p = probed
                stages.append(StageTrace(mu, delta, stage_iters, stat_p, feas_p, comp_p))
                return finish("converged", z, mult, stat_p, feas_p, comp_p)

            # barrier residuals
            s = x[n:]
            g = np.concatenate([cE, cI - s]) if (mE + mI) else np.zeros(0)
            gapl = np.where(fin_l, x - L, np.inf)
            gapu = np.where(fin_u, U - x, np.inf)
            grad_x = np.concatenate([grad, np.zeros(mI)])
            G = _assemble_G(JE, JI, mI) if (mE + mI) else sp.csr_matrix((0, n + mI))
            r_d = grad_x + (G.T @ y if (mE + mI) else 0.0) \
                - np.where(fin_l, zL, 0.0) + np.where(fin_u, zU, 0.0)
            sd = max(1.0, (np.abs(y).sum() + zL.sum() + zU.sum())
                     / max(1, mE + mI + fin_l.sum() + fin_u.sum()) / 100.0)
            comp_mu_terms = [0.0]
            if np.any(fin_l):
                comp_mu_terms.append(
                    float(np.abs(gapl[fin_l] * zL[fin_l] - mu).max()))
            if np.any(fin_u):
                comp_mu_terms.append(
                    float(np.abs(gapu[fin_u] * zU[fin_u] - mu).max()))
            e_mu = max(float(np.abs(r_d).max()) / sd,
                       float(np.abs(g).max()) if g.size else 0.0,
                       max(comp_mu_terms) / sd)
            stat_l, feas_l, comp_l = stat0, feas0, comp0
            final_stage = (not has_barrier) or mu <= opts.mu_min * (1 + 1e-12)
            stage_tol = max(opts.kkt_tol, opts.kappa_eps * mu) if has_barrier \
                else opts.kkt_tol
            # the last barrier stage polishes until the mu-free criterion
            # (checked at the loop top) is met or the budget runs out
            if (e_mu <= stage_tol and not final_stage) \
                    or stage_iters >= opts.max_stage_iterations:
                break
            if it_total >= opts.max_iterations:
                stages.append(StageTrace(mu, delta, stage_iters, stat0, feas0, comp0))
                return finish("max_iter", z, make_mult(delta), stat0, feas0,
                              comp0, "iteration budget exhausted")

            # deferred BFGS update, now that Jacobians at the new point exist
            if B is not None and pending_bfgs is not None:
                z_old, gl_old, y_ref = pending_bfgs
                gl_new = grad + (JE.T @ y_ref[:mE] if mE else 0.0) \
                    + (JI.T @ y_ref[mE:] if mI else 0.0)
                _bfgs_update(B, z - z_old, gl_new - gl_old)
                pending_bfgs = None

            # assemble and solve the primal-dual system
            sigma = np.where(fin_l, zL / gapl, 0.0) + np.where(fin_u, zU / gapu, 0.0)
            if B is not None:
                W = sp.csc_matrix(B)
            else:
                W = sp.csc_matrix(problem.hess_gn)
                if has_pairs:
                    Wp = stage_info.pair_curvature(z, y[mE:], opts.fd_step)
                    if Wp is not None:
                        W = W + Wp
            rhs_x = -(grad_x - np.where(fin_l, mu / gapl, 0.0)
                      + np.where(fin_u, mu / gapu, 0.0)
                      + (G.T @ y if (mE + mI) else 0.0))
            rho = rho_base
            gamma = opts.reg_floor
            solve_kkt = None
            while True:
                K = _assemble_kkt(W, sigma, rho + opts.reg_floor, G, gamma,
                                  n, mI, mE)
                rhs = np.concatenate([rhs_x, -g])
                try:
                    if K.shape[0] < 500:
                        lu_dense = np.linalg.inv(K.toarray())
                        solve_kkt = lambda b, M=lu_dense: M @ b
                    else:
                        lu = spla.splu(K.tocsc())
                        solve_kkt = lu.solve
                    sol = solve_kkt(rhs)
                except (np.linalg.LinAlgError, RuntimeError):
                    sol = None
                if sol is not None and np.all(np.isfinite(sol)):
                    dx = sol[:n + mI]
                    dy = sol[n + mI:]
                    # make the direction a descent direction for the merit
                    dgrad_barrier = grad_x - np.where(fin_l, mu / gapl, 0.0) \
                        + np.where(fin_u, mu / gapu, 0.0)
                    viol = float(np.abs(g).sum())
                    slope_f = float(dgrad_barrier @ dx)
                    nu = max(nu, opts.merit_nu_factor
                             * float(np.abs(y + dy).max(initial=0.0))
                             + opts.merit_nu_offset)
                    if viol > 1e-14 and slope_f > 0:
                        nu = max(nu, 2.0 * slope_f / viol)
                    D = slope_f - nu * viol
                    if D < 0:
                        break
                rho = max(rho * 10.0, opts.reg_floor * 10.0)
                counters["rho_bumps"] += 1
                if rho > opts.reg_max:
                    stages.append(StageTrace(mu, delta, stage_iters,
                                             stat0, feas0, comp0))
                    return finish("line_search_failure", z, make_mult(delta),
                                  stat0, feas0, comp0,
                                  "regularization exhausted")

            dzL = np.where(fin_l, mu / gapl - zL - _dual_over_gap(zL, gapl, fin_l) * dx, 0.0)
            dzU = np.where(fin_u, mu / gapu - zU + _dual_over_gap(zU, gapu, fin_u) * dx, 0.0)

            # fraction-to-boundary step caps
            tau = max(opts.ftb_tau, 1.0 - mu)
            alpha_max = _ftb(x, dx, L, U, fin_l, fin_u, tau)
            alpha_z = min(_ftb_dual(zL, dzL, fin_l, tau),
                          _ftb_dual(zU, dzU, fin_u, tau))

            # Armijo backtracking on the l1 merit function
            def merit(xv):
                zv = xv[:n]
                sv = xv[n:]
                fv, cEv, cIv = eval_all(zv, delta)
                gl = np.where(fin_l, xv - L, np.inf)
                gu = np.where(fin_u, U - xv, np.inf)
                if np.any(gl <= 0) or np.any(gu <= 0):
                    return np.inf, None
                bar = -mu * (np.log(gl[fin_l]).sum() + np.log(gu[fin_u]).sum()) \
                    if has_barrier else 0.0
                gv = np.concatenate([cEv, cIv - sv]) if (mE + mI) else np.zeros(0)
                return fv + bar + nu * float(np.abs(gv).sum()), gv

            phi0, _ = merit(x)
            alpha = alpha_max
            accepted = False
            for _ls in range(opts.max_ls_steps):
                try:
                    phi_trial, g_trial = merit(x + alpha * dx)
                except EvaluatorError:
                    phi_trial, g_trial = np.inf, None
                if phi_trial <= phi0 + opts.armijo_c1 * alpha * D:
                    accepted = True
                    break
                if _ls == 0 and g_trial is not None and (mE + mI) \
                        and solve_kkt is not None:
                    # second-order correction: retarget the constraints at
                    # the trial point, reusing the factorization
                    g_soc = alpha * g + g_trial
                    sol2 = solve_kkt(np.concatenate([rhs_x, -g_soc]))
                    if np.all(np.isfinite(sol2)):
                        dx2 = sol2[:n + mI]
                        alpha2 = _ftb(x, dx2, L, U, fin_l, fin_u, tau)
                        try:
                            phi2, _ = merit(x + alpha2 * dx2)
                        except EvaluatorError:
                            phi2 = np.inf
                        if phi2 <= phi0 + opts.armijo_c1 * alpha2 * D:
                            dx = dx2
                            dy = sol2[n + mI:]
                            dzL = np.where(fin_l, mu / gapl - zL
                                           - _dual_over_gap(zL, gapl, fin_l) * dx, 0.0)
                            dzU = np.where(fin_u, mu / gapu - zU
                                           + _dual_over_gap(zU, gapu, fin_u) * dx, 0.0)
                            alpha_z = min(_ftb_dual(zL, dzL, fin_l, tau),
                                          _ftb_dual(zU, dzU, fin_u, tau))
                            alpha = alpha2
                            accepted = True
                            counters["soc_accepts"] += 1
                            break
                alpha *= opts.ls_backtrack
            if not accepted:
                ls_failures += 1
                counters["ls_failures"] += 1
                if ls_failures >= 3:
                    stages.append(StageTrace(mu, delta, stage_iters,
                                             stat0, feas0, comp0))
                    return finish("line_search_failure", z, make_mult(delta),
                                  stat0, feas0, comp0,
                                  "line search failed repeatedly")
                break  # advance the homotopy and retry
            ls_failures = 0

            # adapt the proximal weight from how much the line search cut
            # the step below its fraction-to-boundary cap
            cut = alpha / max(alpha_max, 1e-300)
            if cut >= 0.5:
                rho_base = max(rho_base / 3.0, 0.0 if B is not None else 1e-8)
            elif cut < 1e-2:
                rho_base = min(max(rho_base * 5.0, 1e-6), 1e2)

            y_next = y + alpha * dy
            if B is not None:
                gl_old = grad + (JE.T @ y_next[:mE] if mE else 0.0) \
                    + (JI.T @ y_next[mE:] if mI else 0.0)
                pending_bfgs = (z.copy(), gl_old, y_next.copy())

            x = x + alpha * dx
            z = x[:n]
            y = y_next
            zL = np.where(fin_l, zL + alpha_z * dzL, 0.0)
            zU = np.where(fin_u, zU + alpha_z * dzU, 0.0)
            # keep bound duals within a broad primal-dual corridor
            with np.errstate(divide="ignore", invalid="ignore"):
                gl = np.where(fin_l, x - L, np.inf)
                gu = np.where(fin_u, U - x, np.inf)
                zL = np.where(fin_l, np.clip(zL, mu / (1e10 * gl), 1e10 * mu / gl), 0.0)
                zU = np.where(fin_u, np.clip(zU, mu / (1e10 * gu), 1e10 * mu / gu), 0.0)
            it_total += 1
            stage_iters += 1
            if opts.debug_hook is not None:
                opts.debug_hook(dict(stage=len(stages), it=it_total, mu=mu,
                                     delta=delta, alpha=alpha, D=D, nu=nu,
                                     dx=dx, dy=dy, z=z.copy(), x=x.copy(),
                                     g=g, phi0=phi0, merit=merit,
                                     r_d=np.abs(r_d).max(), sd=sd,
                                     g_inf=float(np.abs(g).max()) if g.size else 0.0,
                                     comp_mu=max(comp_mu_terms)))
            if log:
                log.write(f"{len(stages)}\t{it_total}\t{mu:.3e}\t{delta:.3e}\t"
                          f"{f:.9e}\t{stat0:.3e}\t{feas0:.3e}\t{comp0:.3e}\t"
                          f"{alpha:.3e}\t{rho:.1e}\n")

        stages.append(StageTrace(mu, delta, stage_iters, stat_l, feas_l, comp_l))
        e0 = max(stat_l, feas_l, comp_l)
        improved = best is None or e0 < 0.67 * best[0]
        if best is None or e0 < best[0]:
            best = (e0, z.copy(), make_mult(delta), stat_l, feas_l, comp_l)
        if not has_barrier or mu <= opts.mu_min * (1 + 1e-12):
            final_rounds += 1
            budget_left = it_total < opts.max_iterations
            if improved and budget_left and final_rounds < 6 and stage_iters:
                continue  # another polish round at the floor
            e0_b, z_b, mult_b, st_b, fe_b, co_b = best
            good = (max(st_b, co_b) <= opts.kkt_tol
                    and fe_b <= min(opts.kkt_tol, opts.feas_tol))
            status = "converged" if good else "max_iter"
            msg = "" if status == "converged" else \
                f"homotopy exhausted with KKT error {e0_b:.3e}"
            return finish(status, z_b, mult_b, st_b, fe_b, co_b, msg)
        mu = max(mu * opts.mu_shrink, opts.mu_min)


def _dual_over_gap(dual, gap, fin):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(fin, dual / gap, 0.0)


def _assemble_G(JE, JI, mI):
    blocks = []
    if JE.shape[0]:
        blocks.append(sp.hstack([JE, sp.csr_matrix((JE.shape[0], mI))]))
    if JI.shape[0]:
        blocks.append(sp.hstack([JI, -sp.eye(mI, format="csr")]))
    return sp.vstack(blocks, format="csr") if blocks else None


def _assemble_kkt(W, sigma, rho, G, gamma, n, mI, mE):
    nm = n + mI
    Wfull = sp.bmat([[W, None], [None, sp.csr_matrix((mI, mI))]], format="csc") \
        if mI else sp.csc_matrix(W)
    D = sp.diags(sigma + rho, shape=(nm, nm))
    H = Wfull + D
    m = mE + mI
    if m == 0:
        return H.tocsc()
    return sp.bmat([[H, G.T], [G, -gamma * sp.eye(m)]], format="csc")


def _ftb(x, dx, L, U, fin_l, fin_u, tau):
    alpha = 1.0
    neg = fin_l & (dx < 0)
    if np.any(neg):
        alpha = min(alpha, float(np.min(-tau * (x - L)[neg] / dx[neg])))
    pos = fin_u & (dx > 0)
    if np.any(pos):
        alpha = min(alpha, float(np.min(tau * (U - x)[pos] / dx[pos])))
    return alpha


def _ftb_dual(dual, ddual, fin, tau):
    neg = fin & (ddual < 0)
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-tau * dual[neg] / ddual[neg])))


def _bfgs_update(B, s, yvec):
    ss = float(s @ s)
    if ss < 1e-24:
        return
    Bs = B @ s
    sBs = float(s @ Bs)
    sy = float(s @ yvec)
    if sBs <= 0:
        return
    if sy < 0.2 * sBs:  # Powell damping keeps B positive definite
        theta = 0.8 * sBs / (sBs - sy)
        yvec = theta * yvec + (1 - theta) * Bs
        sy = float(s @ yvec)
    if sy <= 1e-16:
        return
    B -= np.outer(Bs, Bs) / sBs
    B += np.outer(yvec, yvec) / sy
