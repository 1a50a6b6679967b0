import numpy as np
import pytest
import scipy.sparse as sp

from hopplan.errors import EvaluatorError
from hopplan.fdjac import color_columns, fd_jacobian
from hopplan.model import LegModel, crouch_configuration
from hopplan.solver import sparse_jacobian
from hopplan.terrain import Terrain
from hopplan.transcription import TaskSpec, transcribe_full

from conftest import fd_jacobian as dense_fd


def _random_pattern(rng, m, n, density=0.3):
    return sp.csr_matrix(rng.random((m, n)) < density)


def test_coloring_groups_are_structurally_orthogonal(rng):
    for _ in range(20):
        pat = _random_pattern(rng, 15, 12)
        groups = color_columns(pat)
        csc = pat.tocsc()
        seen = []
        for group in groups:
            rows_hit = set()
            for j in group:
                rows = set(csc.indices[csc.indptr[j]:csc.indptr[j + 1]].tolist())
                assert not (rows & rows_hit)
                rows_hit |= rows
            seen.extend(group.tolist())
        assert sorted(seen) == list(range(12))


def test_coloring_banded_is_narrow():
    # tridiagonal pattern colors with 3 groups regardless of size
    n = 40
    pat = sp.diags([np.ones(n - 1), np.ones(n), np.ones(n - 1)],
                   [-1, 0, 1]).astype(bool)
    groups = color_columns(sp.csr_matrix(pat))
    assert len(groups) == 3


def test_fd_exact_on_affine(rng):
    A = rng.normal(size=(6, 9))
    b = rng.normal(size=6)
    pat = sp.csr_matrix(np.abs(A) > 0)
    J = fd_jacobian(lambda z: A @ z + b, rng.normal(size=9), pat)
    assert np.abs(J.toarray() - A).max() < 1e-9


def test_fd_matches_naive_on_dense_nonlinear(rng):
    def fn(z):
        return np.array([np.sin(z[0]) * z[1], z[2] ** 2 + z[0],
                         np.exp(0.3 * z[1]) - z[2]])
    z = rng.normal(size=3)
    pat = sp.csr_matrix(np.ones((3, 3), dtype=bool))
    J = fd_jacobian(fn, z, pat).toarray()
    J_naive = dense_fd(fn, z)
    assert np.allclose(J, J_naive, atol=1e-9)


def test_fd_never_probes_outside_pattern(rng):
    # the true function is dense, the declared pattern is diagonal; only
    # declared entries may be reported
    A = rng.normal(size=(4, 4))
    pat = sp.csr_matrix(np.eye(4, dtype=bool))
    J = fd_jacobian(lambda z: A @ z, rng.normal(size=4), pat).toarray()
    assert np.all((J != 0) <= np.eye(4, dtype=bool))


def test_fd_raises_on_nonfinite_probe():
    pat = sp.csr_matrix(np.ones((1, 1), dtype=bool))
    with pytest.raises(EvaluatorError):
        fd_jacobian(lambda z: np.array([1.0 / (z[0] - z[0])]), np.ones(1), pat)


def _counting_problem(N):
    model = LegModel()
    terrain = Terrain.flat(0.0)
    q0 = crouch_configuration(model, 0.58)
    task = TaskSpec(q0=q0, qd0=np.zeros(3), goal_trunk_height=0.58, N=N)
    problem = transcribe_full(model, terrain, task)
    counter = {"eq": 0}
    inner = problem.eq_fn

    def counted(z):
        counter["eq"] += 1
        return inner(z)

    problem.eq_fn = counted
    return problem, counter


def test_call_count_independent_of_horizon():
    problem10, c10 = _counting_problem(10)
    sparse_jacobian(problem10, problem10.z0)
    problem20, c20 = _counting_problem(20)
    sparse_jacobian(problem20, problem20.z0)
    assert c10["eq"] == c20["eq"]
    band = 2 * problem10.layout.knot_dim  # knot k couples to knot k-1
    assert c10["eq"] <= 2 * band + 4


def test_sparse_jacobian_matches_dense_fd_on_transcription(rng):
    problem, _ = _counting_problem(3)
    z = problem.z0 + rng.uniform(-0.02, 0.02, problem.n_vars)
    J = sparse_jacobian(problem, z, delta=1e-3).toarray()
    m_eq = problem.eq_pattern.shape[0]
    J_eq_naive = dense_fd(problem.eq, z)
    assert np.allclose(J[:m_eq], J_eq_naive, atol=1e-6)
