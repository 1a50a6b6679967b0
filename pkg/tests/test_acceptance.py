"""Acceptance gate: one test per criterion, each printing a pass line.

Run with ``pytest tests/test_acceptance.py -v -s``.  The planning
criteria solve the reference task configs under ``configs/`` and are
slow (minutes); everything is deterministic.
"""

import itertools
import os
import subprocess
import sys
import time

import numpy as np
import pytest
import scipy.sparse as sp

from hopplan import dynamics as dyn
from hopplan.config import load_config
from hopplan.model import LegModel
from hopplan.pipeline import plan_full_only, plan_hierarchical, verify
from hopplan.solver import SolverOptions, solve
from hopplan.terrain import Terrain
from hopplan.trajio import save_trajectory
from hopplan.transcription import (
    NlpProblem,
    PairGroup,
    phase1_layout,
    phase2_layout,
    static_equilibrium_trajectory,
    transcribe_centroidal,
    transcribe_full,
)

from conftest import fd_jacobian, random_configuration
from test_transcription import hold_task

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(ROOT, "configs")
OUT_DIR = os.path.join(ROOT, "out", "acceptance")


def _ok(label, detail=""):
    print(f"\n[PASS] {label}" + (f" ({detail})" if detail else ""))


def _plan_from_config(name):
    cfg = load_config(os.path.join(CONFIG_DIR, name))
    result = plan_hierarchical(cfg.model, cfg.terrain, cfg.task, cfg.solver)
    return cfg, result


@pytest.fixture(scope="module")
def jump_plan():
    return _plan_from_config("jump.yaml")


@pytest.fixture(scope="module")
def step_small_plan():
    return _plan_from_config("step_small.yaml")


@pytest.fixture(scope="module")
def step_big_plan():
    return _plan_from_config("step_big.yaml")


def _flight_run(model, terrain, traj):
    feet = dyn.forward_kinematics(model, traj.q)
    phi = terrain.signed_distance(feet)
    lam_n = traj.lam[:, 1]
    flying = (phi > 1e-3) & (lam_n < 1e-3)
    best = max((len(list(g)) for k, g in itertools.groupby(flying) if k),
               default=0)
    return flying, best


# -- criterion: dynamics oracle suite (< 10 s) ---------------------------------

def test_dynamics_oracle_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    model = LegModel(base_mode="planar_float")
    slider = LegModel()

    # Jacobian vs central finite differences, 1000 random states
    worst = 0.0
    for _ in range(1000):
        mdl = model if rng.random() < 0.5 else slider
        q = random_configuration(mdl, rng)
        J = dyn.foot_jacobian(mdl, q)
        J_fd = fd_jacobian(lambda x, m=mdl: dyn.forward_kinematics(m, x), q)
        worst = max(worst, np.abs(J - J_fd).max() / max(1.0, np.abs(J).max()))
    assert worst < 1e-6

    # mass matrix symmetric positive definite (batched)
    qs = np.stack([random_configuration(model, rng) for _ in range(1000)])
    H = dyn.mass_matrix(model, qs)
    assert np.abs(H - np.swapaxes(H, -1, -2)).max() < 1e-12
    assert np.linalg.eigvalsh(H).min() > 0

    # linear momentum identity
    for _ in range(200):
        q = random_configuration(model, rng)
        qd = rng.uniform(-2, 2, model.n)
        A = dyn.centroidal_momentum_matrix(model, q)
        err = np.abs(model.total_mass * dyn.com_velocity(model, q, qd)
                     - A[:2] @ qd).max()
        assert err < 1e-10

    # passive free-fall energy drift over 0.5 s at 1e-4 step
    q0 = np.array([0.0, 1.2, 0.2, -0.4, 0.9])
    qd0 = np.array([0.3, 0.5, -0.8, 1.2, -0.6])
    _, Q, Qd = dyn.simulate(model, q0, qd0, duration=0.5, dt=1e-4)
    e = dyn.total_energy(model, Q, Qd)
    drift = float(np.abs(e - e[0]).max())
    assert drift < 1e-5

    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0, f"dynamics suite took {elapsed:.1f} s"
    _ok("dynamics oracle suite",
        f"J err {worst:.1e}, energy drift {drift:.1e} J, {elapsed:.1f} s")


# -- criterion: solver battery (< 5 s) ------------------------------------------

def test_solver_battery():
    t0 = time.perf_counter()
    # projection: min (z-1)^2 s.t. z >= 2
    proj = NlpProblem(
        n_vars=1, objective=lambda z: float((z[0] - 1.0) ** 2),
        gradient=lambda z: np.array([2.0 * (z[0] - 1.0)]),
        lb=np.array([-np.inf]), ub=np.array([np.inf]),
        ineq_fn=lambda z: np.array([z[0] - 2.0]),
        ineq_pattern=sp.csr_matrix(np.array([[True]])))
    rep = solve(proj, np.array([5.0]))
    assert rep.converged and abs(rep.cost - 1.0) < 1e-5

    # equality QP against the closed-form KKT solution
    rng = np.random.default_rng(3)
    A = rng.normal(size=(5, 10))
    c = rng.normal(size=5)
    qp = NlpProblem(
        n_vars=10, objective=lambda z: float(z @ z), gradient=lambda z: 2 * z,
        lb=np.full(10, -np.inf), ub=np.full(10, np.inf),
        eq_fn=lambda z: A @ z - c,
        eq_pattern=sp.csr_matrix(np.ones((5, 10), dtype=bool)))
    rep = solve(qp, np.ones(10), SolverOptions(kkt_tol=1e-10))
    K = np.block([[2 * np.eye(10), A.T], [A, np.zeros((5, 5))]])
    z_star = np.linalg.solve(K, np.concatenate([np.zeros(10), c]))[:10]
    assert rep.converged and np.abs(rep.z - z_star).max() < 1e-8

    # two-branch toy MPCC: branch enumeration gives cost 1.0 on each branch
    def mpcc():
        group = PairGroup(
            name="toy", two_sided=False, scale=1.0,
            a_fn=lambda z: z[0:1], b_fn=lambda z: z[1:2],
            a_cols=(np.array([0]),), b_cols=(np.array([1]),),
            knots=np.array([0]))
        return NlpProblem(
            n_vars=2,
            objective=lambda z: float((z[0] - 1) ** 2 + (z[1] - 1) ** 2),
            gradient=lambda z: np.array([2 * (z[0] - 1), 2 * (z[1] - 1)]),
            lb=np.zeros(2), ub=np.full(2, np.inf), compl=[group])

    branches = set()
    for start in ([0.6, 0.4], [0.4, 0.6]):
        rep = solve(mpcc(), np.array(start))
        assert rep.converged and abs(rep.cost - 1.0) < 1e-4
        branches.add("a" if rep.z[0] > 0.5 else "b")
    assert branches == {"a", "b"}

    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0, f"solver battery took {elapsed:.1f} s"
    _ok("solver battery", f"{elapsed:.1f} s")


# -- criterion: static feasibility (< 1 s) ----------------------------------------

def test_static_feasibility():
    t0 = time.perf_counter()
    model = LegModel()
    terrain = Terrain.flat(0.0)
    task = hold_task(model, N=2)
    p1 = transcribe_centroidal(model, terrain, task)
    z1 = phase1_layout(model, 2).pack(
        static_equilibrium_trajectory(model, terrain, task, phase=1))
    r1 = float(np.abs(p1.eq(z1)).max())
    assert r1 < 1e-9
    p2 = transcribe_full(model, terrain, task)
    z2 = phase2_layout(model, 2).pack(
        static_equilibrium_trajectory(model, terrain, task, phase=2))
    r2 = float(np.abs(p2.eq(z2)).max())
    assert r2 < 1e-9
    for problem, z in ((p1, z1), (p2, z2)):
        assert np.all(problem.ineq_base(z) > -1e-12)
        for _, prod in problem.product_values(z):
            assert np.abs(prod).max() < 1e-9
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _ok("static feasibility", f"residuals {max(r1, r2):.1e}, {elapsed:.2f} s")


# -- criterion: jump task (< 5 min) -------------------------------------------------

def test_jump_task(jump_plan):
    cfg, result = jump_plan
    assert result.ok, f"jump plan failed: {result.notes}"
    assert result.phase2_report.converged
    wall = result.wall_time
    assert wall < 300.0, f"jump took {wall:.0f} s"
    traj = result.phase2_traj
    flying, run = _flight_run(cfg.model, cfg.terrain, traj)
    assert run >= 3, f"flight run {run}"
    # countermovement: CoM dips before the first flight knot
    com_z = dyn.com_position(cfg.model, traj.q)[:, 1]
    com0 = dyn.com_position(cfg.model, cfg.task.q0)[1]
    first_flight = int(np.argmax(flying))
    dip = com0 - com_z[:first_flight].min()
    assert dip >= 0.02, f"countermovement dip {dip * 1000:.1f} mm"
    os.makedirs(OUT_DIR, exist_ok=True)
    save_trajectory(os.path.join(OUT_DIR, "jump.csv"), traj, cfg.model,
                    cfg.terrain, cfg.task)
    _ok("jump task",
        f"flight {run} knots, dip {dip * 1000:.0f} mm, {wall:.0f} s")


def test_flight_phase_ballistic(jump_plan):
    # on the converged centroidal trajectory, knots with no contact force
    # obey the vertical momentum equation with lambda = 0 (the rail still
    # acts horizontally on a slider base, so only z is checked)
    cfg, result = jump_plan
    if not result.phase1_report.converged:
        pytest.skip("centroidal phase did not certify on this run")
    traj = result.phase1_traj
    task = cfg.task
    m, g = cfg.model.total_mass, cfg.model.gravity
    rd0 = dyn.com_velocity(cfg.model, task.q0, task.qd0)
    rd_prev = np.vstack([rd0[None, :], traj.rd[:-1]])
    flight = traj.lam[:, 1] < 1e-3
    tol = 10.0 * cfg.solver.kkt_tol
    worst = 0.0
    for k in np.flatnonzero(flight):
        res = m * (traj.rd[k, 1] - rd_prev[k, 1]) - task.h * (-m * g)
        worst = max(worst, abs(res))
    assert worst <= tol * m, f"ballistic residual {worst:.2e}"
    _ok("flight-phase ballistic momentum", f"residual {worst:.1e}")


# -- criterion: step tasks (< 10 min each) -------------------------------------------

@pytest.mark.parametrize("fixture_name, height", [
    ("step_small_plan", 0.10),
    ("step_big_plan", 0.15),
])
def test_step_tasks(fixture_name, height, request):
    cfg, result = request.getfixturevalue(fixture_name)
    assert result.ok, f"step plan failed: {result.notes}"
    wall = result.wall_time
    assert wall < 600.0, f"step task took {wall:.0f} s"
    traj = result.phase2_traj
    feet = dyn.forward_kinematics(cfg.model, traj.q)
    phi = cfg.terrain.signed_distance(feet)
    lam_n = traj.lam[:, 1]
    active = (phi <= 1e-4) & (lam_n > 1e-3)
    assert active.any(), "no active contact found"
    last_active = int(np.flatnonzero(active)[-1])
    foot_x = feet[last_active, 0]
    step_edge = cfg.terrain.segments[1][0]
    assert foot_x >= step_edge, (
        f"final foothold x={foot_x:.3f} not on the raised segment")
    assert phi[last_active] <= 1e-4
    # the foothold is on the elevated surface, not hovering next to it
    assert abs(feet[last_active, 1] - height) <= 1e-3 + cfg.terrain.ramp_width
    if height == 0.15:
        os.makedirs(OUT_DIR, exist_ok=True)
        save_trajectory(os.path.join(OUT_DIR, "step_big.csv"), traj,
                        cfg.model, cfg.terrain, cfg.task)
    _ok(f"step task {height:.2f} m",
        f"foothold x={foot_x:.3f}, phi={phi[last_active]:.1e}, {wall:.0f} s")


# -- criterion: complementarity at solutions -------------------------------------------

def test_complementarity_at_solutions(jump_plan, step_small_plan, step_big_plan):
    worst_gap = worst_slip = worst_drift = 0.0
    for cfg, result in (jump_plan, step_small_plan, step_big_plan):
        assert result.ok
        traj = result.phase2_traj
        feet = dyn.forward_kinematics(cfg.model, traj.q)
        phi = cfg.terrain.signed_distance(feet)
        lam_n = traj.lam[:, 1]
        gap_prod = np.abs(lam_n * np.maximum(phi, 0.0)).max()
        feet_prev = np.vstack([dyn.forward_kinematics(cfg.model, cfg.task.q0)[None],
                               feet[:-1]])
        slip_prod = np.abs(lam_n * (feet[:, 0] - feet_prev[:, 0])).max()
        worst_gap = max(worst_gap, float(gap_prod))
        worst_slip = max(worst_slip, float(slip_prod))
        assert gap_prod <= 1e-6, f"gap product {gap_prod:.2e}"
        assert slip_prod <= 1e-6, f"slip product {slip_prod:.2e}"
        # tangential drift per maximal stance
        active = (phi <= 1e-6) & (lam_n > 1e-3)
        k = 0
        while k < len(active):
            if active[k]:
                j = k
                drift = 0.0
                while j < len(active) and active[j]:
                    prev_x = feet_prev[j, 0]
                    drift += abs(feet[j, 0] - prev_x)
                    j += 1
                worst_drift = max(worst_drift, drift)
                k = j
            else:
                k += 1
        assert worst_drift <= 1e-4, f"stance drift {worst_drift:.2e} m"
    _ok("complementarity at solutions",
        f"gap {worst_gap:.1e}, slip {worst_slip:.1e}, drift {worst_drift:.1e} m")


# -- criterion: hierarchy benefit (benchmark + bench table) ------------------------------

@pytest.fixture(scope="module")
def benchmark_results():
    bench_dir = os.path.join(CONFIG_DIR, "bench")
    paths = sorted(p for p in os.listdir(bench_dir) if p.endswith(".yaml"))
    assert len(paths) == 16, "expected 8 goals per task family"
    rows = []
    for name in paths:
        cfg = load_config(os.path.join(bench_dir, name))
        hier = plan_hierarchical(cfg.model, cfg.terrain, cfg.task, cfg.solver)
        full = plan_full_only(cfg.model, cfg.terrain, cfg.task, cfg.solver)
        rows.append((name, cfg.task.family, hier, full))
        print(f"  bench {name}: hier {'ok' if hier.ok else 'FAIL'} "
              f"cost={hier.cost:.4g} {hier.wall_time:.0f}s | "
              f"full {'ok' if full.ok else 'FAIL'} cost={full.cost:.4g} "
              f"{full.wall_time:.0f}s", flush=True)
    return rows


def test_hierarchy_benefit(benchmark_results):
    by_family = {}
    for name, family, hier, full in benchmark_results:
        if full.ok:
            assert hier.ok, (
                f"{name}: full-only converged but hierarchical did not")
        if hier.ok and full.ok:
            red = (full.cost - hier.cost) / full.cost * 100.0
            assert red >= -5.0, (
                f"{name}: hierarchical cost worse by {-red:.1f}%")
            by_family.setdefault(family, []).append(red)
    assert set(by_family) == {"jumping", "step_jumping"}
    details = []
    for family, reductions in by_family.items():
        avg = float(np.mean(reductions))
        assert avg >= 0.0, f"{family}: average cost reduction {avg:.2f}% < 0"
        details.append(f"{family} avg cost red {avg:.2f}% over {len(reductions)}")
    _ok("hierarchy benefit", "; ".join(details))


def test_bench_table_layout(tmp_path):
    # layout check only: two tiny hold configs, one per family
    import yaml
    bench_dir = tmp_path / "mini"
    bench_dir.mkdir()
    base = yaml.safe_load(open(os.path.join(CONFIG_DIR, "bench", "jump_01.yaml")))
    base["task"]["N"] = 4
    base["task"]["goal"] = {"trunk_height": 0.58}
    base["task"]["family"] = "jumping"
    (bench_dir / "a.yaml").write_text(yaml.safe_dump(base))
    base2 = yaml.safe_load(yaml.safe_dump(base))
    base2["task"]["family"] = "step_jumping"
    (bench_dir / "b.yaml").write_text(yaml.safe_dump(base2))
    out = tmp_path / "out"
    from hopplan.cli import main
    rc = main(["bench", str(bench_dir), "--out", str(out)])
    assert rc == 0
    table = open(out / "bench.txt").read()
    assert "Time reduction [%]" in table
    assert "Cost reduction [%]" in table
    assert "Md." in table and "Av." in table
    assert "jumping" in table and "step_jumping" in table
    assert (out / "bench.csv").exists()
    _ok("bench table layout")


# -- criterion: independent verification ----------------------------------------------

def test_independent_verification(jump_plan, step_small_plan, step_big_plan):
    worst = 0.0
    for cfg, result in (jump_plan, step_small_plan, step_big_plan):
        assert result.ok
        tol = 10.0 * cfg.solver.kkt_tol
        report = verify(result.phase2_traj, cfg.model, cfg.terrain,
                        cfg.task, "full")
        assert report.passes(tol), f"verification failed:\n{report}"
        worst = max(worst, report.max_residual)
    # fault injection: a flipped contact force must be caught at its knot
    cfg, result = jump_plan
    traj = result.phase2_traj
    bad = type(traj)(q=traj.q.copy(), qd=traj.qd.copy(),
                     lam=traj.lam.copy(), tau=traj.tau.copy())
    knot = bad.lam[:, 1].argmax()
    bad.lam[knot, 1] = -50.0
    report = verify(bad, cfg.model, cfg.terrain, cfg.task, "full")
    assert not report.passes(10.0 * cfg.solver.kkt_tol)
    flagged = report.families["force_nonneg"]
    assert flagged.argmax_knot == int(knot)
    _ok("independent verification", f"max residual {worst:.1e}")


# -- secondary: plot script on the exported CSVs ------------------------------------------

def test_secondary_plots(jump_plan, step_big_plan):
    # jump_plan/step_big_plan fixtures export the CSVs this consumes
    for stem in ("jump", "step_big"):
        csv_path = os.path.join(OUT_DIR, f"{stem}.csv")
        assert os.path.exists(csv_path)
        proc = subprocess.run(
            [sys.executable, os.path.join(ROOT, "viz", "plot.py"), csv_path,
             "--out", OUT_DIR, "--frames", "10"],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert os.path.exists(os.path.join(OUT_DIR, f"{stem}_timeseries.png"))
        assert os.path.exists(os.path.join(OUT_DIR, f"{stem}_frames.png"))
    _ok("secondary plots render from exported CSVs")
