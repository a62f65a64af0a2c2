import numpy as np
import pytest

from dpvi.metrics import (
    DiscreteMeasure,
    component_mass,
    ksd_squared,
    w2_bruteforce,
    w2_exact,
)
from dpvi.targets import GaussianMixtureTarget, sample_reference


def uniform(points):
    return DiscreteMeasure.from_samples(np.asarray(points, dtype=float))


def random_measure(rng, n, d=2):
    return DiscreteMeasure(rng.normal(size=(n, d)), rng.dirichlet(np.ones(n)))


def test_measure_validation():
    with pytest.raises(ValueError, match="sum"):
        DiscreteMeasure([[0.0]], [0.5])
    with pytest.raises(ValueError, match="nonnegative"):
        DiscreteMeasure([[0.0], [1.0]], [1.5, -0.5])
    with pytest.raises(ValueError, match="finite"):
        DiscreteMeasure([[np.nan]], [1.0])
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0], [1.0]], [1.0])


def test_w2_single_atom_transport():
    dist, plan = w2_exact(uniform([[0.0]]), uniform([[3.0]]))
    assert dist == pytest.approx(3.0, abs=1e-12)
    assert plan.objective == pytest.approx(9.0, abs=1e-12)


def test_w2_split_mass():
    mu = DiscreteMeasure([[0.0], [2.0]], [0.5, 0.5])
    nu = uniform([[1.0]])
    dist, plan = w2_exact(mu, nu)
    assert dist == pytest.approx(1.0, abs=1e-12)
    assert plan.mass.sum() == pytest.approx(1.0, abs=1e-12)


def test_w2_identical_measures_zero_with_identity_plan():
    mu = DiscreteMeasure([[0.0, 1.0], [2.0, -1.0]], [0.3, 0.7])
    dist, plan = w2_exact(mu, mu)
    assert dist == pytest.approx(0.0, abs=1e-12)
    moved = plan.mass[plan.source_index != plan.target_index].sum()
    assert moved <= 1e-12


def test_w2_plan_marginals():
    rng = np.random.default_rng(0)
    mu, nu = random_measure(rng, 7), random_measure(rng, 5)
    _, plan = w2_exact(mu, nu)
    rows = np.zeros(7)
    np.add.at(rows, plan.source_index, plan.mass)
    cols = np.zeros(5)
    np.add.at(cols, plan.target_index, plan.mass)
    assert np.max(np.abs(rows - mu.masses)) <= 1e-9
    assert np.max(np.abs(cols - nu.masses)) <= 1e-9


def test_w2_symmetry():
    rng = np.random.default_rng(1)
    for _ in range(10):
        mu, nu = random_measure(rng, 6), random_measure(rng, 9)
        assert w2_exact(mu, nu)[0] == pytest.approx(w2_exact(nu, mu)[0], abs=1e-9)


def test_w2_triangle_inequality():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a, b, c = (random_measure(rng, rng.integers(2, 7)) for _ in range(3))
        dab = w2_exact(a, b)[0]
        dbc = w2_exact(b, c)[0]
        dac = w2_exact(a, c)[0]
        assert dac <= dab + dbc + 1e-9


def test_w2_zero_iff_equal_after_atom_merge():
    # the same distribution written with duplicate atoms
    mu = DiscreteMeasure([[1.0], [1.0], [0.0]], [0.25, 0.25, 0.5])
    nu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    assert w2_exact(mu, nu)[0] == pytest.approx(0.0, abs=1e-12)
    other = DiscreteMeasure([[0.0], [1.0]], [0.4, 0.6])
    assert w2_exact(mu, other)[0] > 1e-3


def test_w2_drops_zero_mass_atoms():
    mu = DiscreteMeasure([[0.0], [500.0]], [1.0, 0.0])
    nu = uniform([[3.0]])
    dist, _ = w2_exact(mu, nu)
    assert dist == pytest.approx(3.0, abs=1e-12)


def test_w2_size_guard():
    rng = np.random.default_rng(3)
    mu = uniform(rng.normal(size=(1500, 1)))
    nu = uniform(rng.normal(size=(1500, 1)))
    with pytest.raises(ValueError, match="subsample"):
        w2_exact(mu, nu)


def test_w2_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        w2_exact(uniform([[0.0]]), uniform([[0.0, 1.0]]))


def test_bruteforce_matches_exact_on_random_instances():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n, m = rng.integers(1, 5), rng.integers(1, 5)
        mu = DiscreteMeasure(rng.normal(size=(n, 2)), rng.dirichlet(np.ones(n)))
        nu = DiscreteMeasure(rng.normal(size=(m, 2)), rng.dirichlet(np.ones(m)))
        assert abs(w2_exact(mu, nu)[0] - w2_bruteforce(mu, nu)) <= 1e-9


def test_bruteforce_trivial_cases():
    pts = [[0.0], [1.0], [2.0]]
    assert w2_bruteforce(uniform(pts), uniform(pts)) == pytest.approx(0.0, abs=1e-12)
    assert w2_bruteforce(uniform([[0.0], [1.0]]), uniform([[0.0], [1.0]])) == 0.0


def test_bruteforce_size_limit():
    rng = np.random.default_rng(5)
    big = uniform(rng.normal(size=(5, 1)))
    with pytest.raises(ValueError, match="<= 4"):
        w2_bruteforce(big, uniform([[0.0]]))


# --- kernel Stein discrepancy ----------------------------------------------


def test_ksd_single_atom(std_normal_1d):
    assert ksd_squared(std_normal_1d, uniform([[0.0]]), h=1.0) == pytest.approx(1.0, abs=1e-12)


def test_ksd_two_atom_value(std_normal_1d):
    measure = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    expected = 0.25 * (1.0 + 2.0 * (-np.exp(-0.5)) + 2.0)
    assert ksd_squared(std_normal_1d, measure, h=1.0) == pytest.approx(expected, abs=1e-12)


def test_ksd_grows_with_far_mass(std_normal_1d):
    near = ksd_squared(std_normal_1d, uniform([[0.5]]), h=1.0)
    far = ksd_squared(std_normal_1d, uniform([[8.0]]), h=1.0)
    assert far > near


def test_ksd_default_bandwidth_is_median(std_normal_1d):
    from dpvi.kernels import median_bandwidth

    measure = uniform([[0.0], [0.7], [-1.1]])
    auto = ksd_squared(std_normal_1d, measure)
    explicit = ksd_squared(std_normal_1d, measure, h=median_bandwidth(measure.atoms))
    assert auto == explicit


def test_ksd_decreases_with_sample_size(std_normal_1d):
    medians = []
    for n in (20, 80, 320):
        values = []
        for seed in range(10):
            samples = sample_reference(std_normal_1d, n, seed=seed)
            values.append(ksd_squared(std_normal_1d, uniform(samples), h=1.0))
        medians.append(float(np.median(values)))
    assert medians[0] > medians[1] > medians[2]


def test_ksd_matches_first_variation_quadratic_form(gmm_default):
    from dpvi.variation import first_variation

    rng = np.random.default_rng(6)
    X = rng.normal(size=(12, 2))
    w = rng.dirichlet(np.ones(12))
    u = first_variation("ksdd", gmm_default, w, X, X, 0.9)
    assert abs(float(w @ u) - ksd_squared(gmm_default, DiscreteMeasure(X, w), h=0.9)) <= 1e-12


# --- component mass ----------------------------------------------------------


def test_component_mass_all_atoms_at_first_mean(gmm_default):
    atoms = np.tile(gmm_default.means[0], (4, 1))
    masses = component_mass(gmm_default, DiscreteMeasure.from_samples(atoms))
    assert np.allclose(masses, [1.0, 0.0])


def test_component_mass_mirrored_atoms():
    mix = GaussianMixtureTarget([0.5, 0.5], [[-1.0, 0.0], [1.0, 0.0]], [np.eye(2), np.eye(2)])
    measure = DiscreteMeasure([[-1.0, 0.3], [1.0, -0.3]], [0.5, 0.5])
    assert np.allclose(component_mass(mix, measure), [0.5, 0.5])
