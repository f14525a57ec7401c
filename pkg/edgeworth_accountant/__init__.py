# __init__.py

from .config import DEFAULT_SMOOTHING_EPS, SCHEMA_VERSION
from .errors import (
    AccountantError,
    BoundUnavailableError,
    ConfigurationError,
    DegenerateCompositionError,
    NumericalError,
    OracleError,
    QuadratureError,
    RootBracketError,
)
from .mechanisms import (
    CompositionStats,
    MechanismKind,
    MechanismSpec,
    PLLRBranch,
    PLLRDistribution,
    PLLRMomentProfile,
    Variable,
    branches_for,
    composition_stats,
    mechanism_from_sigma,
    pllr_density_pair,
    pllr_moments,
    profile_from_distribution,
)
from .edgeworth import (
    EdgeworthSeries,
    edgeworth_cdf_rescaled,
    edgeworth_cdf_standardized,
    edgeworth_pdf_standardized,
)
from .bounds import (
    TailBoundParams,
    UniformBoundInputs,
    gaussian_tail_bound,
    iid_refined_bound,
    laplace_tail_bound,
    remainder_r1,
    uniform_bound_leading_terms,
    uniform_bound_order1,
)
from .accountant import (
    AccountantRequest,
    Delta,
    EdgeworthAccountant,
    Epsilon,
    EpsilonEstimate,
    Mode,
    PrivacyPoint,
    SamplingRule,
    delta_at_epsilon,
    delta_curve,
    epsilon_at_delta,
    epsilon_search_bound,
    gdp_delta,
    parse_mode,
    privacy_curve,
)
from .oracle import GridDensity, cf_modulus, composition_oracle, convolve_m_fold, mc_tail, oracle_delta

__all__ = [
    "MechanismKind",
    "MechanismSpec",
    "PLLRBranch",
    "Variable",
    "PLLRDistribution",
    "PLLRMomentProfile",
    "CompositionStats",
    "mechanism_from_sigma",
    "branches_for",
    "pllr_density_pair",
    "pllr_moments",
    "profile_from_distribution",
    "composition_stats",
    "EdgeworthSeries",
    "edgeworth_cdf_standardized",
    "edgeworth_cdf_rescaled",
    "edgeworth_pdf_standardized",
    "UniformBoundInputs",
    "TailBoundParams",
    "uniform_bound_leading_terms",
    "uniform_bound_order1",
    "remainder_r1",
    "iid_refined_bound",
    "gaussian_tail_bound",
    "laplace_tail_bound",
    "Mode",
    "Epsilon",
    "Delta",
    "AccountantRequest",
    "PrivacyPoint",
    "EpsilonEstimate",
    "EdgeworthAccountant",
    "SamplingRule",
    "delta_at_epsilon",
    "epsilon_at_delta",
    "delta_curve",
    "privacy_curve",
    "gdp_delta",
    "epsilon_search_bound",
    "parse_mode",
    "GridDensity",
    "convolve_m_fold",
    "composition_oracle",
    "oracle_delta",
    "mc_tail",
    "cf_modulus",
    "AccountantError",
    "ConfigurationError",
    "NumericalError",
    "QuadratureError",
    "RootBracketError",
    "OracleError",
    "BoundUnavailableError",
    "DegenerateCompositionError",
    "DEFAULT_SMOOTHING_EPS",
    "SCHEMA_VERSION",
]
