import numpy as np
import pytest

from hopplan.model import LegModel


@pytest.fixture
def slider():
    return LegModel(base_mode="slider")


@pytest.fixture
def floater():
    return LegModel(base_mode="planar_float")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_configuration(model, rng, spread=1.0):
    q = rng.uniform(-spread, spread, model.n)
    if model.base_mode == "slider":
        q[0] = rng.uniform(0.3, 0.9)
    else:
        q[1] = rng.uniform(0.3, 0.9)
    return q


def fd_jacobian(f, x, eps=1e-6):
    """Central-difference Jacobian of a vector function (test oracle)."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(f(x))
    J = np.zeros((f0.size, x.size))
    for j in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[j] += eps
        xm[j] -= eps
        J[:, j] = (np.atleast_1d(f(xp)) - np.atleast_1d(f(xm))) / (2 * eps)
    return J
