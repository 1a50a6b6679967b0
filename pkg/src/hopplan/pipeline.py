"""Two-phase planning pipeline: centroidal solve, warm start, full solve,
interpolation to a continuous plan, and an independent feasibility check.

The verifier re-derives every constraint family from the trajectory with
plain per-knot loops over the dynamics and terrain primitives; it shares
no code with the transcription evaluators.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import dynamics as dyn
from .errors import DimensionError
from .model import LegModel
from .solver import SolveReport, SolverOptions, solve
from .terrain import Terrain
from .transcription import (
    KnotTrajectory,
    TaskSpec,
    transcribe_centroidal,
    transcribe_full,
)

MODE_PHI_TOL = 1e-6     # m: gap below which a knot counts as touching
MODE_FORCE_TOL = 1e-3   # N: normal force above which contact is active


# -- continuous plan -----------------------------------------------------------

@dataclass
class ContinuousPlan:
    """Cubic Hermite interpolation of (q, qd) with zero-order-hold efforts
    and contact forces.  Spans t in [0, (M-1) h] for M knots."""

    h: float
    q: np.ndarray            # (M, n)
    qd: np.ndarray           # (M, n)
    tau: np.ndarray | None   # (M, n_q)
    lam: np.ndarray | None   # (M, 2)

    @property
    def duration(self) -> float:
        return (self.q.shape[0] - 1) * self.h

    def sample(self, t: float):
        """(q, qd, tau, lam) at time t; knot times reproduce knot values."""
        if t < -1e-12 or t > self.duration + 1e-12:
            raise ValueError(f"t = {t} outside [0, {self.duration}]")
        M = self.q.shape[0]
        k = min(int(t / self.h), M - 2)
        u = (t - k * self.h) / self.h
        q0, q1 = self.q[k], self.q[k + 1]
        v0, v1 = self.qd[k], self.qd[k + 1]
        h00 = 2 * u ** 3 - 3 * u ** 2 + 1
        h10 = u ** 3 - 2 * u ** 2 + u
        h01 = -2 * u ** 3 + 3 * u ** 2
        h11 = u ** 3 - u ** 2
        q = h00 * q0 + h10 * self.h * v0 + h01 * q1 + h11 * self.h * v1
        d00 = 6 * u ** 2 - 6 * u
        d10 = 3 * u ** 2 - 4 * u + 1
        d01 = -6 * u ** 2 + 6 * u
        d11 = 3 * u ** 2 - 2 * u
        qd = (d00 * q0 / self.h + d10 * v0 + d01 * q1 / self.h + d11 * v1)
        zoh = k if u < 1.0 else k + 1
        tau = self.tau[zoh] if self.tau is not None else None
        lam = self.lam[zoh] if self.lam is not None else None
        return q, qd, tau, lam


def interpolate(traj: KnotTrajectory, h: float) -> ContinuousPlan:
    """Continuous plan from knot data: cubic Hermite on (q, qd), efforts
    and forces held piecewise constant over [t_k, t_{k+1})."""
    return ContinuousPlan(h=h, q=np.asarray(traj.q, dtype=float),
                          qd=np.asarray(traj.qd, dtype=float),
                          tau=None if traj.tau is None else np.asarray(traj.tau),
                          lam=None if traj.lam is None else np.asarray(traj.lam))


# -- independent verification ----------------------------------------------------

@dataclass
class FamilyResidual:
    family: str
    max_abs: float
    mean_abs: float
    argmax_knot: int

    def __str__(self):
        return (f"{self.family:<22s} max {self.max_abs:12.3e} "
                f"mean {self.mean_abs:12.3e} at knot {self.argmax_knot}")


@dataclass
class VerificationReport:
    families: dict = field(default_factory=dict)

    def add(self, family: str, residuals):
        residuals = np.atleast_1d(np.asarray(residuals, dtype=float))
        if residuals.size == 0:
            return
        absres = np.abs(residuals)
        if absres.ndim > 1:  # one row per knot: reduce so argmax is a knot
            absres = absres.reshape(absres.shape[0], -1).max(axis=1)
        self.families[family] = FamilyResidual(
            family, float(absres.max()), float(absres.mean()),
            int(absres.argmax()))

    @property
    def max_residual(self) -> float:
        return max((f.max_abs for f in self.families.values()), default=0.0)

    def worst_family(self) -> FamilyResidual | None:
        if not self.families:
            return None
        return max(self.families.values(), key=lambda f: f.max_abs)

    def passes(self, tol: float) -> bool:
        return self.max_residual <= tol

    def violating(self, tol: float):
        return [f for f in self.families.values() if f.max_abs > tol]

    def __str__(self):
        return "\n".join(str(self.families[k]) for k in sorted(self.families))


def verify(traj: KnotTrajectory, model: LegModel, terrain: Terrain,
           task: TaskSpec, phase: str) -> VerificationReport:
    """Recompute every constraint family residual of the given phase from
    scratch, one knot at a time (the canonical, unscaled equations)."""
    if phase not in ("centroidal", "full"):
        raise ValueError(f"unknown phase {phase!r}")
    N, h = traj.n_knots, task.h
    if traj.q.shape != (N, model.n):
        raise DimensionError(
            f"trajectory q has shape {traj.q.shape}, expected ({N}, {model.n})")
    if N != task.N:
        raise DimensionError(f"trajectory has {N} knots, task wants {task.N}")
    rep = VerificationReport()
    m, g = model.total_mass, model.gravity
    B = dyn.actuation_matrix(model)

    q_all = np.vstack([task.q0[None, :], traj.q])
    qd_all = np.vstack([task.qd0[None, :], traj.qd])
    feet = np.stack([dyn.forward_kinematics(model, q_all[k])
                     for k in range(N + 1)])
    phi = np.array([terrain.signed_distance(feet[k]) for k in range(N + 1)])
    lam = traj.lam if traj.lam is not None else np.zeros((N, 2))

    res_int_q = np.zeros(N)
    for k in range(N):
        res_int_q[k] = np.abs(q_all[k] - q_all[k + 1] + h * qd_all[k + 1]).max()
    rep.add("integration_q", res_int_q)

    gap_nonneg = np.minimum(phi[1:], 0.0)
    force_nonneg = np.minimum(lam[:, 1], 0.0)
    gap_prod = lam[:, 1] * phi[1:]
    slip_prod = lam[:, 1] * (feet[1:, 0] - feet[:-1, 0])
    rep.add("gap_nonneg", gap_nonneg)
    rep.add("force_nonneg", force_nonneg)
    rep.add("gap_product", gap_prod)
    rep.add("slip_product", slip_prod)

    lo, hi = np.array(model.joint_pos_lower), np.array(model.joint_pos_upper)
    joints = traj.q[:, model.n_b:]
    rep.add("joint_bounds", np.maximum(joints - hi, 0.0)
            + np.maximum(lo - joints, 0.0))
    vmax = np.array(model.joint_vel_limit)
    jvel = traj.qd[:, model.n_b:]
    rep.add("velocity_bounds", np.maximum(np.abs(jvel) - vmax, 0.0))

    if phase == "centroidal":
        if any(getattr(traj, f) is None for f in ("r", "rd", "hc", "hcd", "x")):
            raise DimensionError("centroidal verification needs r, rd, hc, hcd, x")
        r0 = dyn.com_position(model, task.q0)
        rd0 = dyn.com_velocity(model, task.q0, task.qd0)
        hc0 = float(dyn.centroidal_momentum_matrix(model, task.q0)[2] @ task.qd0)
        x0 = feet[0]
        r_all = np.vstack([r0[None, :], traj.r])
        rd_all = np.vstack([rd0[None, :], traj.rd])
        hc_all = np.concatenate([[hc0], traj.hc])
        res_r = np.zeros(N)
        res_hc = np.zeros(N)
        res_mom = np.zeros(N)
        res_ang = np.zeros(N)
        res_xk = np.zeros(N)
        res_com = np.zeros(N)
        res_hcc = np.zeros(N)
        for k in range(N):
            res_r[k] = np.abs(r_all[k] - r_all[k + 1] + h * traj.rd[k]).max()
            res_hc[k] = abs(hc_all[k] - hc_all[k + 1] + h * traj.hcd[k])
            mom = m * (rd_all[k + 1] - rd_all[k]) \
                - h * (lam[k] + m * np.array([0.0, -g]))
            if model.base_mode == "slider":
                res_mom[k] = abs(mom[1])
            else:
                res_mom[k] = np.abs(mom).max()
                d = traj.x[k] - traj.r[k]
                res_ang[k] = abs(traj.hcd[k]
                                 - (d[0] * lam[k, 1] - d[1] * lam[k, 0]))
            res_xk[k] = np.abs(traj.x[k] - feet[k + 1]).max()
            res_com[k] = np.abs(traj.r[k]
                                - dyn.com_position(model, traj.q[k])).max()
            A = dyn.centroidal_momentum_matrix(model, traj.q[k])
            res_hcc[k] = abs(traj.hc[k] - float(A[2] @ traj.qd[k]))
        rep.add("integration_r", res_r)
        rep.add("integration_hc", res_hc)
        rep.add("momentum", res_mom)
        if model.base_mode != "slider":
            rep.add("angular_rate", res_ang)
        rep.add("contact_position", res_xk)
        rep.add("com_coupling", res_com)
        rep.add("hc_coupling", res_hcc)
        # gap product against the x decision variable as transcribed
        rep.add("gap_product_x",
                lam[:, 1] * np.array([terrain.signed_distance(traj.x[k])
                                      for k in range(N)]))
    else:
        if traj.tau is None:
            raise DimensionError("full-dynamics verification needs tau")
        res_dyn = np.zeros(N)
        tau_scale = 1.0 if task.paper_exact_dynamics_rows else h
        for k in range(N):
            H = dyn.mass_matrix(model, traj.q[k])
            c = dyn.bias_forces(model, traj.q[k], traj.qd[k])
            J = dyn.foot_jacobian(model, traj.q[k])
            r = H @ (qd_all[k + 1] - qd_all[k]) \
                + h * (c - J.T @ lam[k]) - tau_scale * (B @ traj.tau[k])
            res_dyn[k] = np.abs(r).max()
        rep.add("dynamics", res_dyn)
        emax = np.array(model.joint_effort_limit)
        rep.add("effort_bounds", np.maximum(np.abs(traj.tau) - emax, 0.0))
    return rep


def contact_flags(traj: KnotTrajectory, model: LegModel,
                  terrain: Terrain) -> np.ndarray:
    """Per-knot contact activity: touching and loaded."""
    feet = dyn.forward_kinematics(model, traj.q)
    phi = terrain.signed_distance(feet)
    lam_n = traj.lam[:, 1] if traj.lam is not None else np.zeros(traj.n_knots)
    return (phi <= MODE_PHI_TOL) & (lam_n > MODE_FORCE_TOL)


# -- planning entry points --------------------------------------------------------

@dataclass
class PlanResult:
    task: TaskSpec
    status: str                      # 'ok' or 'failed'
    phase1_report: SolveReport | None = None
    phase1_traj: KnotTrajectory | None = None
    phase2_report: SolveReport | None = None
    phase2_traj: KnotTrajectory | None = None
    plan: ContinuousPlan | None = None
    verification: VerificationReport | None = None
    modes: np.ndarray | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def cost(self) -> float:
        return self.phase2_report.cost if self.phase2_report else np.nan

    @property
    def wall_time(self) -> float:
        t = 0.0
        for rep in (self.phase1_report, self.phase2_report):
            if rep is not None:
                t += rep.wall_time
        return t


def _default_options() -> SolverOptions:
    # transcribed problems carry an exact objective Hessian model
    return SolverOptions(hessian="gauss_newton")


def _finalize(result: PlanResult, model, terrain, task) -> PlanResult:
    traj = result.phase2_traj
    result.modes = contact_flags(traj, model, terrain)
    result.verification = verify(traj, model, terrain, task, "full")
    # prepend the initial state; efforts and forces hold backward over the
    # first interval, matching the implicit integration rule
    nodes = KnotTrajectory(
        q=np.vstack([task.q0[None, :], traj.q]),
        qd=np.vstack([task.qd0[None, :], traj.qd]),
        tau=np.vstack([traj.tau[:1], traj.tau]),
        lam=np.vstack([traj.lam[:1], traj.lam]))
    result.plan = interpolate(nodes, task.h)
    result.status = "ok"
    return result


def plan_full_only(model: LegModel, terrain: Terrain, task: TaskSpec,
                   options: SolverOptions | None = None) -> PlanResult:
    """Single-phase baseline: the full program from the cold start."""
    opts = options or _default_options()
    problem = transcribe_full(model, terrain, task)
    report = solve(problem, problem.z0, opts)
    result = PlanResult(task=task, status="failed", phase2_report=report)
    result.phase2_traj = problem.layout.unpack(report.z)
    if not report.converged:
        result.notes.append(f"full-dynamics solve failed: {report.status}")
        return result
    return _finalize(result, model, terrain, task)


WARM_ATTEMPT_BUDGET = 800
PHASE1_BUDGET = 2000


def plan_hierarchical(model: LegModel, terrain: Terrain, task: TaskSpec,
                      options: SolverOptions | None = None) -> PlanResult:
    """Centroidal solve, then the full program warm-started from it.

    If the warm-started refinement fails (the centroidal motion may be
    too aggressive to realize under effort limits), the full program is
    retried from the deterministic cold start and the degradation is
    recorded.
    """
    opts = options or _default_options()
    p1 = transcribe_centroidal(model, terrain, task)
    p1_opts = replace(opts,
                      max_iterations=min(opts.max_iterations, PHASE1_BUDGET))
    rep1 = solve(p1, p1.z0, p1_opts)
    traj1 = p1.layout.unpack(rep1.z)
    result = PlanResult(task=task, status="failed",
                        phase1_report=rep1, phase1_traj=traj1)
    # an uncertified centroidal solution is still a usable warm start as
    # long as it is essentially feasible
    warm_usable = rep1.converged or rep1.kkt_feasibility <= 1e-3
    warm = traj1 if warm_usable else None
    if not rep1.converged:
        result.notes.append(
            f"centroidal phase did not certify ({rep1.status}); "
            + ("warm-starting from its trajectory anyway"
               if warm_usable else "continuing from the cold start"))
    rep2 = None
    if warm is not None:
        p2 = transcribe_full(model, terrain, task, warm_start=warm)
        warm_opts = replace(
            opts, max_iterations=min(opts.max_iterations, WARM_ATTEMPT_BUDGET),
            log_path=(opts.log_path + ".warm" if opts.log_path else None))
        rep2 = solve(p2, p2.z0, warm_opts)
        if not rep2.converged:
            result.notes.append(
                f"warm-started refinement failed ({rep2.status}); "
                "retrying from the cold start")
            rep2 = None
    if rep2 is None:
        p2 = transcribe_full(model, terrain, task)
        rep2 = solve(p2, p2.z0, opts)
    result.phase2_report = rep2
    result.phase2_traj = p2.layout.unpack(rep2.z)
    if not rep2.converged:
        result.notes.append(f"full-dynamics solve failed: {rep2.status}")
        return result
    return _finalize(result, model, terrain, task)
