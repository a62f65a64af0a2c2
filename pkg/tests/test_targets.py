import math

import numpy as np
import pytest

from dpvi.targets import (
    GaussianMixtureTarget,
    GaussianTarget,
    GPRegressionTarget,
    grid_reference,
    load_lidar,
    sample_reference,
    synthetic_lidar,
)

from conftest import central_diff


def test_std_normal_log_density_at_zero(std_normal_1d):
    assert std_normal_1d.log_density(np.array([0.0])) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_equal_mixture_log_density_at_zero(gmm_1d):
    expected = math.log(math.exp(-0.5) / math.sqrt(2 * math.pi))
    assert gmm_1d.log_density(np.array([0.0])) == pytest.approx(expected, abs=1e-12)


def test_gaussian_log_density_at_mean(gaussian_2d):
    cov = gaussian_2d.covariance
    expected = -0.5 * math.log(np.linalg.det(2 * math.pi * cov))
    assert gaussian_2d.log_density(gaussian_2d.mean) == pytest.approx(expected, abs=1e-12)


def test_std_normal_score(std_normal_1d):
    assert std_normal_1d.score(np.array([2.0]))[0] == pytest.approx(-2.0, abs=1e-14)


def test_symmetric_mixture_score_vanishes(gmm_1d):
    assert gmm_1d.score(np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-14)


def test_gaussian_score_jacobian_constant():
    target = GaussianTarget([0.0, 0.0], np.diag([2.0, 1.0]))
    jac = target.score_jacobian(np.array([3.1, -0.4]))
    assert np.allclose(jac, np.diag([-0.5, -1.0]), atol=1e-14)
    assert np.allclose(target.score_jacobian(np.zeros(2)), jac)


def test_std_normal_score_jacobian_is_minus_one(std_normal_1d):
    assert std_normal_1d.score_jacobian(np.array([1.7]))[0, 0] == pytest.approx(-1.0)


@pytest.mark.parametrize("fixture", ["std_normal_1d", "gaussian_2d", "gmm_default", "gp_small"])
def test_score_matches_finite_differences(fixture, request):
    target = request.getfixturevalue(fixture)
    rng = np.random.default_rng(42)
    for _ in range(100):
        x = rng.normal(size=target.dim)
        fd = central_diff(target.log_density, x, step=1e-5)
        s = target.score(x)
        assert np.linalg.norm(s - fd) / (1.0 + np.linalg.norm(s)) <= 1e-5


@pytest.mark.parametrize("fixture", ["gaussian_2d", "gmm_default"])
def test_analytic_score_jacobian_symmetric(fixture, request):
    target = request.getfixturevalue(fixture)
    rng = np.random.default_rng(3)
    for _ in range(20):
        jac = target.score_jacobian(rng.normal(size=target.dim))
        assert np.max(np.abs(jac - jac.T)) <= 1e-8


def test_mixture_jacobian_matches_score_differences(gmm_default):
    rng = np.random.default_rng(9)
    for _ in range(20):
        x = rng.normal(size=2)
        jac = gmm_default.score_jacobian(x)
        for a in range(2):
            e = np.zeros(2)
            e[a] = 1e-5
            fd = (gmm_default.score(x + e) - gmm_default.score(x - e)) / 2e-5
            assert np.linalg.norm(jac[:, a] - fd) / (1.0 + np.linalg.norm(fd)) <= 1e-5


def test_mixture_log_density_lower_bound(gmm_default):
    rng = np.random.default_rng(0)
    log_min_weight = math.log(min(gmm_default.weights))
    for _ in range(50):
        x = rng.normal(scale=3.0, size=2)
        comp_logs = [
            GaussianTarget(gmm_default.means[j], gmm_default.covariances[j]).log_density(x)
            for j in range(gmm_default.n_components)
        ]
        assert gmm_default.log_density(x) >= log_min_weight + min(comp_logs) - 1e-12


def test_mixture_validation_errors():
    with pytest.raises(ValueError):
        GaussianMixtureTarget([0.6, 0.5], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
    with pytest.raises(ValueError):
        GaussianMixtureTarget([0.5, 0.5], [[0.0], [1.0]], [[[1.0]], [[-1.0]]])
    with pytest.raises(ValueError):
        GaussianMixtureTarget([], [], [])


def test_gaussian_validation_errors():
    with pytest.raises(ValueError):
        GaussianTarget([0.0, 0.0], [[1.0, 0.5], [0.4999, 1.0]])  # asymmetric
    with pytest.raises(ValueError):
        GaussianTarget([0.0], [[-1.0]])


def test_dimension_and_finiteness_errors(gaussian_2d):
    with pytest.raises(ValueError):
        gaussian_2d.log_density(np.zeros(3))
    with pytest.raises(ValueError):
        gaussian_2d.score(np.array([np.nan, 0.0]))


# --- GP posterior ---------------------------------------------------------


def test_gp_score_matches_finite_differences(gp_small):
    rng = np.random.default_rng(12)
    for _ in range(20):
        phi = rng.uniform(-2.0, 2.0, size=2)
        fd = central_diff(gp_small.log_density, phi, step=1e-5)
        s = gp_small.score(phi)
        assert np.linalg.norm(s - fd) / (1.0 + np.linalg.norm(s)) <= 1e-5


def test_gp_prior_modes():
    x, y = synthetic_lidar(n=20, seed=1)
    literal = GPRegressionTarget(x, y, prior_mode="literal_constant")
    phi_prior = GPRegressionTarget(x, y, prior_mode="phi_prior")
    phi = np.array([0.4, -0.7])
    # the literal data term is constant in phi: densities differ by exactly
    # the two prior terms, scores by the analytic phi-prior gradient
    delta = literal.log_density(phi) - phi_prior.log_density(phi)
    expected = -math.log(1.0 + float(x @ x)) + math.log1p(float(phi @ phi))
    assert delta == pytest.approx(expected, abs=1e-10)
    score_delta = literal.score(phi) - phi_prior.score(phi)
    assert np.allclose(score_delta, 2.0 * phi / (1.0 + phi @ phi), atol=1e-9)


def test_gp_validation_errors():
    with pytest.raises(ValueError):
        GPRegressionTarget([1.0], [2.0])  # N < 2
    with pytest.raises(ValueError):
        GPRegressionTarget([1.0, 2.0], [0.0, np.inf])
    with pytest.raises(ValueError):
        GPRegressionTarget([1.0, 2.0], [0.0, 1.0], noise_variance=0.0)
    with pytest.raises(ValueError):
        GPRegressionTarget([1.0, 2.0], [0.0, 1.0], prior_mode="nope")


def test_gp_has_no_exact_sampler(gp_small):
    with pytest.raises(ValueError, match="grid_reference"):
        sample_reference(gp_small, 10, seed=0)


# --- reference samplers ---------------------------------------------------


def test_sample_reference_clt_bound(std_normal_1d):
    n = 100_000
    samples = sample_reference(std_normal_1d, n, seed=5)
    assert abs(samples.mean()) <= 4.0 / math.sqrt(n)


def test_sample_reference_component_fraction():
    mix = GaussianMixtureTarget(
        [1.0 / 3.0, 2.0 / 3.0], [[-4.0], [4.0]], [[[1.0]], [[1.0]]]
    )
    n = 100_000
    samples = sample_reference(mix, n, seed=6)
    frac = float(np.mean(samples[:, 0] > 0))
    assert abs(frac - 2.0 / 3.0) <= 0.01


def test_sample_reference_deterministic(gmm_default):
    a = sample_reference(gmm_default, 1, seed=11)
    b = sample_reference(gmm_default, 1, seed=11)
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        sample_reference(gmm_default, 0, seed=1)


def test_grid_reference_recovers_gaussian_covariance():
    target = GaussianTarget([0.0, 0.0], np.eye(2))
    points = grid_reference(target, [[-5.0, 5.0], [-5.0, 5.0]], resolution=200, n=10_000, seed=3)
    cov = np.cov(points.T)
    assert np.linalg.norm(cov - np.eye(2), ord="fro") <= 0.05


def test_grid_reference_rejects_degenerate_grid(gp_small):
    with pytest.raises(ValueError):
        grid_reference(gp_small, [[-1, 1], [-1, 1]], resolution=1, n=10, seed=0)


def test_grid_reference_deterministic(gp_small):
    bounds = [[-4.0, 2.0], [-3.0, 4.0]]
    a = grid_reference(gp_small, bounds, resolution=60, n=50, seed=8)
    b = grid_reference(gp_small, bounds, resolution=60, n=50, seed=8)
    assert np.array_equal(a, b)


def test_grid_reference_rejects_missed_mass():
    class NoMass:
        dim = 2

        def log_density(self, x):
            return np.full(np.atleast_2d(x).shape[0], -np.inf)

    with pytest.raises(ValueError, match="miss"):
        grid_reference(NoMass(), [[0, 1], [0, 1]], resolution=50, n=5, seed=0)


# --- dataset loading ------------------------------------------------------


def test_load_lidar_with_and_without_header(tmp_path):
    with_header = tmp_path / "lidar.csv"
    with_header.write_text("range,logratio\n390,0.01\n410,-0.2\n450,-0.75\n")
    x, y = load_lidar(with_header)
    assert x.tolist() == [390.0, 410.0, 450.0]
    assert y[2] == -0.75

    bare = tmp_path / "bare.csv"
    bare.write_text("1.0,0.5\n2.0,-0.5\n")
    x, y = load_lidar(bare)
    assert len(x) == 2


def test_load_lidar_errors(tmp_path):
    bad_header = tmp_path / "bad.csv"
    bad_header.write_text("foo,bar\n1,2\n3,4\n")
    with pytest.raises(ValueError, match="header"):
        load_lidar(bad_header)
    short = tmp_path / "short.csv"
    short.write_text("range,logratio\n1,2\n")
    with pytest.raises(ValueError):
        load_lidar(short)


def test_synthetic_lidar_deterministic():
    x1, y1 = synthetic_lidar(n=64, seed=2)
    x2, y2 = synthetic_lidar(n=64, seed=2)
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    assert len(x1) == 64 and x1.min() >= 0.0 and x1.max() <= 1.0
