import numpy as np
import pytest

from dpvi.targets import (
    GaussianMixtureTarget,
    GaussianTarget,
    GPRegressionTarget,
    default_gmm_target,
    synthetic_lidar,
)


@pytest.fixture(scope="session")
def std_normal_1d():
    return GaussianTarget([0.0], [[1.0]])


@pytest.fixture(scope="session")
def gaussian_2d():
    return GaussianTarget([0.5, -0.3], [[2.0, 0.3], [0.3, 1.0]])


@pytest.fixture(scope="session")
def gmm_default():
    return default_gmm_target()


@pytest.fixture(scope="session")
def gmm_1d():
    return GaussianMixtureTarget([0.5, 0.5], [[-1.0], [1.0]], [[[1.0]], [[1.0]]])


@pytest.fixture(scope="session")
def gp_small():
    x, y = synthetic_lidar(n=20, seed=1)
    return GPRegressionTarget(x, y)


def central_diff(f, x, step=1e-5):
    """Independent central-difference gradient oracle."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for a in range(x.size):
        e = np.zeros_like(x)
        e[a] = step
        grad[a] = (f(x + e) - f(x - e)) / (2.0 * step)
    return grad
