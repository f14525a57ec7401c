import math

import numpy as np
import pytest
from scipy import stats

from edgeworth_accountant.accountant import gdp_delta
from edgeworth_accountant.errors import ConfigurationError
from edgeworth_accountant.mechanisms import (
    MechanismKind,
    MechanismSpec,
    PLLRBranch,
    PLLRDistribution,
    Variable,
    mechanism_from_sigma,
    pllr_moments,
)
from edgeworth_accountant.oracle import (
    GridDensity,
    cf_modulus,
    composition_oracle,
    convolve_heterogeneous,
    convolve_m_fold,
    discretize,
    discretize_step,
    mc_tail,
    oracle_delta,
    privacy_curve_delta,
)


def test_grid_density_summaries():
    grid = GridDensity(0.5, -2, np.array([0.25, 0.5, 0.25]))
    np.testing.assert_allclose(grid.values, [-1.0, -0.5, 0.0])
    assert grid.mean == pytest.approx(-0.5)
    assert grid.variance == pytest.approx(0.125 + 0.25 / 12)
    assert grid.cdf(-1.25) == 0.0
    assert grid.cdf(-0.75) == pytest.approx(0.25)
    assert grid.sf(-0.75) == pytest.approx(0.75)
    assert grid.pdf(-0.5) == pytest.approx(1.0)
    assert grid.pdf(3.0) == 0.0


def test_single_step_is_unchanged(gaussian_spec):
    dist = PLLRDistribution(gaussian_spec, PLLRBranch.PRIMARY, Variable.X)
    step = discretize(dist, 0.01, 4096)
    assert convolve_m_fold(step, 1) is step
    with pytest.raises(ConfigurationError):
        convolve_m_fold(step, 0)


def test_mismatched_grids_rejected(gaussian_spec):
    dist = PLLRDistribution(gaussian_spec, PLLRBranch.PRIMARY, Variable.X)
    with pytest.raises(ConfigurationError):
        convolve_heterogeneous([(discretize(dist, 0.01, 4096), 2), (discretize(dist, 0.02, 4096), 2)])


def test_gaussian_composition_law(gaussian_spec):
    law = composition_oracle([(gaussian_spec, 4)], PLLRBranch.PRIMARY, Variable.X, grid_size=2 ** 16)
    assert law.total_mass == pytest.approx(1.0, abs=1e-12)
    x = np.linspace(-8.0, 4.0, 121)
    np.testing.assert_allclose(law.cdf(x), stats.norm(-2.0, 2.0).cdf(x), atol=1e-6)


def test_heterogeneous_gaussian_law():
    a = mechanism_from_sigma("gaussian", sigma=1.0)
    b = mechanism_from_sigma("gaussian", sigma=0.5)
    law = composition_oracle([(a, 2), (b, 1)], PLLRBranch.PRIMARY, Variable.Y, grid_size=2 ** 16)
    # mu^2 adds up: 2 * 1 + 4 = 6
    x = np.linspace(-4.0, 10.0, 57)
    np.testing.assert_allclose(law.cdf(x), stats.norm(3.0, math.sqrt(6.0)).cdf(x), atol=1e-6)


def test_oracle_delta_matches_gdp(gaussian_spec):
    eps = np.linspace(0.0, 6.0, 25)
    delta = oracle_delta([(gaussian_spec, 4)], eps, grid_size=2 ** 16)
    np.testing.assert_allclose(delta, gdp_delta(2.0, eps), atol=1e-5)
    assert np.all(np.diff(delta) <= 1e-15)


def test_oracle_delta_far_past_support(gaussian_spec):
    # e^eps overflows beyond ~709
    delta = oracle_delta([(gaussian_spec, 4)], [50.0, 800.0, 1e4], grid_size=2 ** 12)
    np.testing.assert_array_equal(delta, [0.0, 0.0, 0.0])


def test_identity_composition_has_zero_delta():
    spec = MechanismSpec(MechanismKind.SUBSAMPLED_GAUSSIAN, 1.0, 0.0)
    law = composition_oracle([(spec, 10)], PLLRBranch.PRIMARY, Variable.Y)
    assert law.n == 1
    assert privacy_curve_delta(law, 0.0) == 0.0
    np.testing.assert_array_equal(oracle_delta([(spec, 10)], [0.0, 1.0]), [0.0, 0.0])


def test_oracle_delta_rejects_negative_eps(gaussian_spec):
    with pytest.raises(ConfigurationError):
        oracle_delta([(gaussian_spec, 2)], -0.1, grid_size=2 ** 12)


def test_mc_tail_contract(gaussian_spec):
    with pytest.raises(ConfigurationError):
        mc_tail(gaussian_spec, PLLRBranch.PRIMARY, Variable.X, 10, 0.0, n_samples=100)
    assert mc_tail(gaussian_spec, PLLRBranch.PRIMARY, Variable.X, 3, -math.inf, n_samples=10_000) == (1.0, 0.0)
    first = mc_tail(gaussian_spec, PLLRBranch.PRIMARY, Variable.X, 3, 0.0, n_samples=10_000, seed=5)
    assert first == mc_tail(gaussian_spec, PLLRBranch.PRIMARY, Variable.X, 3, 0.0, n_samples=10_000, seed=5)


def test_mc_tail_median(gaussian_spec):
    estimate, se = mc_tail(gaussian_spec, PLLRBranch.PRIMARY, Variable.X, 1, -0.5, n_samples=40_000, seed=3)
    assert abs(estimate - 0.5) < 4 * se


def test_cf_modulus_of_gaussian_step(gaussian_spec):
    step = discretize_step(PLLRDistribution(gaussian_spec, PLLRBranch.PRIMARY, Variable.X), n=2 ** 17)
    modulus = cf_modulus(step, 1)
    assert modulus(0.0) == pytest.approx(1.0, abs=1e-12)
    t = np.linspace(-10.0, 10.0, 201)
    np.testing.assert_allclose(modulus(t), np.exp(-0.5 * t ** 2), atol=1e-8)


def test_cf_modulus_is_bounded(dpsgd_spec):
    step = discretize_step(PLLRDistribution(dpsgd_spec, PLLRBranch.PRIMARY, Variable.X), n=2 ** 12)
    values = cf_modulus(step, 50)(np.linspace(0.0, 500.0, 10_000))
    assert np.all(values <= 1.0)
    assert np.all(values >= 0.0)


@pytest.mark.slow
def test_density_ratio_survives_convolution():
    spec = mechanism_from_sigma("subsampled-gaussian", sigma=1.0, p=0.05)
    m, h, n = 50, 1e-3, 2 ** 16
    x_law = convolve_m_fold(discretize(PLLRDistribution(spec, PLLRBranch.PRIMARY, Variable.X), h, n, 0.0), m)
    y_law = convolve_m_fold(discretize(PLLRDistribution(spec, PLLRBranch.PRIMARY, Variable.Y), h, n, 0.0), m)
    lo = max(x_law.offset, y_law.offset)
    hi = min(x_law.offset + x_law.n, y_law.offset + y_law.n)
    px = x_law.mass[lo - x_law.offset:hi - x_law.offset]
    py = y_law.mass[lo - y_law.offset:hi - y_law.offset]
    values = np.arange(lo, hi) * h
    keep = (px > 1e-10) & (py > 1e-10)
    assert keep.sum() > 100
    np.testing.assert_allclose(py[keep], np.exp(values[keep]) * px[keep], rtol=1e-3)


@pytest.mark.slow
def test_oracle_agrees_with_sampling(dpsgd_spec):
    m = 100
    law = composition_oracle([(dpsgd_spec, m)], PLLRBranch.PRIMARY, Variable.X, grid_size=2 ** 18)
    profile = pllr_moments(dpsgd_spec, PLLRBranch.PRIMARY, Variable.X)
    centre, scale = m * profile.mean, math.sqrt(m * profile.variance)
    for k in (0.0, 1.0, 2.0):
        threshold = centre + k * scale
        estimate, se = mc_tail(dpsgd_spec, PLLRBranch.PRIMARY, Variable.X, m, threshold, n_samples=40_000, seed=11)
        assert abs(law.sf(threshold) - estimate) < 5 * se + 1e-4
