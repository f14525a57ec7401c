import pytest
from scipy import stats

from edgeworth_accountant.mechanisms import (
    MechanismKind,
    PLLRBranch,
    Variable,
    composition_stats,
    mechanism_from_sigma,
    pllr_moments,
    profile_from_distribution,
)


@pytest.fixture
def dpsgd_spec():
    """Subsampled Gaussian step with p = 0.01 and sigma = 0.8."""
    return mechanism_from_sigma(MechanismKind.SUBSAMPLED_GAUSSIAN, sigma=0.8, p=0.01)


@pytest.fixture
def gaussian_spec():
    return mechanism_from_sigma(MechanismKind.PURE_GAUSSIAN, sigma=1.0)


@pytest.fixture
def laplace_spec():
    return mechanism_from_sigma(MechanismKind.SUBSAMPLED_LAPLACE, mu=1.0, p=0.5)


@pytest.fixture(scope="session")
def exponential_stats():
    """Ten centred Exp(1) steps: the sum is a shifted Gamma(10)."""
    profile = profile_from_distribution(stats.expon())
    return composition_stats([(profile, 10)])


@pytest.fixture
def gaussian_stats():
    spec = mechanism_from_sigma(MechanismKind.PURE_GAUSSIAN, sigma=1.0)
    profile = pllr_moments(spec, PLLRBranch.PRIMARY, Variable.X)

    def build(m):
        return composition_stats([(profile, m)])

    return build
