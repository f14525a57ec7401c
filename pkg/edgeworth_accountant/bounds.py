"""Finite-sample error bounds for the first-order Edgeworth approximation.

Three families:
  * the uniform bound sup_x |F_{X,m}(x) - G_{m,1,X}(x)| with its explicit remainder,
  * the refined O(1/m) bound for i.i.d. compositions with absolutely continuous steps,
  * adaptive exponential tail bounds for the PLLR sums of subsampled Gaussian and
    Laplace compositions, converted to a pointwise CDF gap at a given epsilon.

The smoothing parameter of the remainder is called ``smoothing_eps`` throughout and
has nothing to do with the privacy epsilon.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, optimize, stats
from scipy.special import exp1, gamma, gammaincc, logsumexp

from .config import (
    C_K3_SQ,
    C_K3_SQRT_M,
    C_K4,
    C_LAMBDA3_K3,
    C_LAMBDA3_SQ,
    CF_LOG_GRID_POINTS,
    CHI_1,
    DEFAULT_SMOOTHING_EPS,
    GAUSSIAN_TRUNCATION_SD,
    PSI_BOUND,
    R1_LEAD_COEF,
    R2_HIGH_COEF,
    R2_LAMBDA3_COEF,
    R2_LEAD_COEF,
    ROOT_XTOL,
    T1_STAR,
    TRUNCATION_SCAN_POINTS,
    TRUNCATION_SEARCH_MAX,
)
from .errors import BoundUnavailableError, ConfigurationError, DegenerateCompositionError
from .mechanisms import (
    CompositionStats,
    MechanismKind,
    MechanismSpec,
    PLLRBranch,
    Variable,
    checked_quad,
    pllr_moments,
)

logger = logging.getLogger(__name__)

# (2/T) |Psi(u/T)| <= PSI_FACTOR / u
PSI_FACTOR = PSI_BOUND / math.pi
# exponents above this only make a bound vacuous; the cap keeps it finite
MAX_EXPONENT = 700.0


@dataclass(frozen=True)
class UniformBoundInputs:
    stats: CompositionStats
    m: int
    smoothing_eps: float = DEFAULT_SMOOTHING_EPS
    has_nonzero_third_moment: bool = True

    def __post_init__(self):
        if not 0.0 < self.smoothing_eps < 1.0 / 3.0:
            raise ConfigurationError(f"smoothing_eps must lie in (0, 1/3), got {self.smoothing_eps}")
        if self.m < 1:
            raise ConfigurationError(f"m must be >= 1, got {self.m}")

    @classmethod
    def from_stats(cls, stats: CompositionStats, smoothing_eps: float = DEFAULT_SMOOTHING_EPS) -> UniformBoundInputs:
        return cls(stats, stats.m, smoothing_eps, stats.has_nonzero_third_moment)

    # shorthands used by every term
    @property
    def k3t(self) -> float:
        return self.stats.k3_tilde

    @property
    def abs_lambda3(self) -> float:
        return abs(self.stats.lambda3)

    @property
    def smoothing_T(self) -> float:
        return 16.0 * math.pi ** 4 * self.m ** 2 / self.k3t ** 4

    @property
    def inner_limit(self) -> float:
        """sqrt(2 eps) (m / K_4)^{1/4}: end of the region handled by R_1."""
        return math.sqrt(2.0 * self.smoothing_eps) * (self.m / self.stats.k4) ** 0.25

    @property
    def a_m(self) -> float:
        return 2.0 * T1_STAR * math.pi * math.sqrt(self.m) / self.k3t


@dataclass(frozen=True)
class TailBoundParams:
    a: float
    a_plus: float
    eta: float
    tau_sq: float


def _integrate(func: Callable[[float], float], lo: float, hi: float, term: str) -> float:
    """Quadrature over [lo, hi] split on a doubling mesh, so mass near ``lo`` is not missed."""
    if not hi > lo:
        return 0.0
    edges = [lo]
    step = 1.0
    while edges[-1] + step < hi:
        edges.append(edges[-1] + step)
        step *= 2.0
    edges.append(hi)
    return sum(checked_quad(func, a, b, term) for a, b in zip(edges[:-1], edges[1:]))


def _upper_gamma(s: float, x: float) -> float:
    """Unnormalised upper incomplete gamma Gamma(s, x)."""
    return float(gammaincc(s, x) * gamma(s))


def _cf_bound_exponent(u, inputs: UniformBoundInputs):
    """Exponent of the printed upper bound on |f_{S_m}(u)|."""
    root_m = math.sqrt(inputs.m)
    return np.minimum(MAX_EXPONENT, -0.5 * u ** 2 + CHI_1 * np.abs(u) ** 3 * inputs.k3t / root_m
            + u ** 2 * math.sqrt(inputs.stats.k4) / (2.0 * root_m))


def _cf_gap_bound(u: float, inputs: UniformBoundInputs) -> float:
    """Upper bound on |f_{S_m}(u) - e^{-u^2/2}|.

    The third-moment Taylor bound K_3 |u|^3 / (6 sqrt(m)) times the exponential
    envelope, capped by the triangle-inequality bound 1 + e^{-u^2/2}.
    """
    gauss = math.exp(-0.5 * u * u)
    taylor = (inputs.stats.k3 / (6.0 * math.sqrt(inputs.m)) * abs(u) ** 3
              * math.exp(_cf_bound_exponent(u, inputs)))
    return min(taylor, 1.0 + gauss)


# ---------------------------------------------------------------------------
# R_1 machinery
# ---------------------------------------------------------------------------
def _p1(inputs: UniformBoundInputs) -> float:
    eps = inputs.smoothing_eps
    value = 144.0 + 48.0 * eps + 4.0 * eps ** 2
    if inputs.has_nonzero_third_moment:
        value += 96.0 * math.sqrt(2.0 * eps) + 32.0 * eps + 16.0 * math.sqrt(2.0) * eps ** 1.5
    return value / 576.0


def _e1(inputs: UniformBoundInputs) -> float:
    eps = inputs.smoothing_eps
    return math.exp(eps ** 2 * (1.0 / 6.0 + 2.0 * _p1(inputs) / (1.0 - 3.0 * eps) ** 2))


def remainder_integrand_r1(t: float, inputs: UniformBoundInputs) -> float:
    """R_1(t, smoothing_eps) for t >= 0."""
    eps = inputs.smoothing_eps
    m = inputs.m
    q = inputs.stats.k4 / m
    t = abs(t)
    u11 = t ** 6 / 24.0 * q ** 1.5 + t ** 8 / 576.0 * q ** 2
    u12 = 0.0
    if inputs.has_nonzero_third_moment:
        u12 = t ** 5 / 6.0 * q ** 1.25 + t ** 6 / 36.0 * q ** 1.5 + t ** 7 / 72.0 * q ** 1.75
    shrink = 2.0 * (1.0 - 3.0 * eps) ** 2
    inner = 1.0 / 24.0 + _p1(inputs) / shrink
    k4 = inputs.stats.k4
    return (u11 + u12) / shrink + _e1(inputs) * (
        t ** 8 * k4 ** 2 / (2.0 * m ** 2) * inner ** 2
        + t ** 7 * inputs.abs_lambda3 * k4 / (6.0 * m ** 1.5) * inner
    )


def _r1_integral(inputs: UniformBoundInputs) -> float:
    return PSI_FACTOR * checked_quad(
        lambda u: u * math.exp(-0.5 * u * u) * remainder_integrand_r1(u, inputs),
        0.0, inputs.inner_limit, "R1 integral")


# ---------------------------------------------------------------------------
# Uniform first-order bound
# ---------------------------------------------------------------------------
def uniform_bound_leading_terms(inputs: UniformBoundInputs) -> float:
    """The closed-form O(1/sqrt(m)) + O(1/m) part of the uniform bound."""
    m, k3t, lam = inputs.m, inputs.k3t, inputs.abs_lambda3
    return (C_K3_SQRT_M * k3t / math.sqrt(m)
            + (C_K3_SQ * k3t ** 2 + C_K4 * inputs.stats.k4 + C_LAMBDA3_K3 * lam * k3t
               + C_LAMBDA3_SQ * lam ** 2) / m)


def remainder_terms_r1(inputs: UniformBoundInputs) -> dict[str, float]:
    """The five summands of r_{1,m}, by name."""
    m, k3t, lam = inputs.m, inputs.k3t, inputs.abs_lambda3
    root_m = math.sqrt(m)
    lo, hi = inputs.inner_limit, inputs.a_m
    terms = {
        "lead": R1_LEAD_COEF * k3t ** 4 / (16.0 * math.pi ** 4 * m ** 2),
        "lambda3_exp": lam * math.exp(-2.0 * m ** 2 / k3t ** 4) / (3.0 * math.pi * root_m),
        "I32": PSI_FACTOR * _integrate(lambda u: _cf_gap_bound(u, inputs) / u, lo, hi, "I32"),
        "I33": lam / (6.0 * root_m) * PSI_FACTOR * _integrate(
            lambda u: u * u * math.exp(-0.5 * u * u), lo, hi, "I33"),
        "R1": _r1_integral(inputs),
    }
    logger.debug("r1 terms at m=%d: %s", m, terms)
    return terms


def remainder_r1(inputs: UniformBoundInputs) -> float:
    if inputs.stats.point_mass:
        return 0.0
    return float(sum(remainder_terms_r1(inputs).values()))


def uniform_bound_order1(inputs: UniformBoundInputs) -> float:
    """Delta_{m,1}: leading terms plus r_{1,m}; zero for a point-mass composition."""
    if inputs.stats.point_mass:
        return 0.0
    return uniform_bound_leading_terms(inputs) + remainder_r1(inputs)


# ---------------------------------------------------------------------------
# i.i.d. refined bound
# ---------------------------------------------------------------------------
def _log_grid_integral(func: Callable[[np.ndarray], np.ndarray], lo: float, hi: float) -> float:
    """int_lo^hi func(t) / t dt on a log-spaced grid (substitution t = e^s)."""
    if not hi > lo:
        return 0.0
    s = np.linspace(math.log(lo), math.log(hi), CF_LOG_GRID_POINTS)
    return float(integrate.simpson(func(np.exp(s)), x=s))


def remainder_terms_r2(inputs: UniformBoundInputs, cf_modulus: Callable[[np.ndarray], np.ndarray]) -> dict[str, float]:
    m, k3t, lam = inputs.m, inputs.k3t, inputs.abs_lambda3
    root_m = math.sqrt(m)
    T = inputs.smoothing_T
    lo = inputs.inner_limit
    quarter = T ** 0.25
    e1_flag = lo < quarter / math.pi
    e2_flag = quarter < T
    gamma_coef = PSI_BOUND * lam / (3.0 * math.pi * math.sqrt(2.0) * root_m)
    eps = inputs.smoothing_eps

    i52 = i53 = 0.0
    if e1_flag:
        i52 = gamma_coef * (_upper_gamma(1.5, eps * math.sqrt(m / inputs.stats.k4))
                            - _upper_gamma(1.5, math.sqrt(T) / (2.0 * math.pi ** 2)))
        i53 = PSI_FACTOR * _integrate(lambda u: _cf_gap_bound(u, inputs) / u, lo, quarter / math.pi, "I53")
    i54 = 0.0
    if e2_flag:
        i54 = gamma_coef * (_upper_gamma(1.5, math.sqrt(T) / (2.0 * math.pi ** 2))
                            - _upper_gamma(1.5, T ** 2 / (2.0 * math.pi ** 2)))
    j3 = PSI_FACTOR * _log_grid_integral(cf_modulus, quarter / math.pi, T1_STAR * quarter)
    a5, b5 = quarter / math.pi, T / math.pi
    j5 = PSI_FACTOR * 0.5 * float(exp1(0.5 * a5 ** 2) - exp1(0.5 * b5 ** 2)) if b5 > a5 else 0.0

    # exp(-128 pi^6 m^4 / K^8) underflows harmlessly
    terms = {
        "lead": R2_LEAD_COEF * k3t ** 4 / (16.0 * math.pi ** 4 * m ** 2),
        "lambda3": R2_LAMBDA3_COEF * lam * k3t ** 4 / (16.0 * math.pi ** 4 * m ** 2.5),
        "high": R2_HIGH_COEF * k3t ** 16 / (16.0 ** 4 * math.pi ** 16 * m ** 8),
        "lambda3_exp": lam * math.exp(-128.0 * math.pi ** 6 * m ** 4 / k3t ** 8) / (3.0 * math.pi * root_m),
        "I52": max(i52, 0.0),
        "I53": i53,
        "I54": max(i54, 0.0),
        "J3": j3,
        "J5": max(j5, 0.0),
        "R1": _r1_integral(inputs),
    }
    logger.debug("r2 terms at m=%d: %s", m, terms)
    return terms


def iid_refined_bound(inputs: UniformBoundInputs, cf_modulus: Callable[[np.ndarray], np.ndarray]) -> float:
    """O(1/m) uniform bound for an i.i.d. composition.

    ``cf_modulus`` returns |f_{S_m}(t)| of the standardized sum for an array of t.
    """
    if not inputs.stats.is_iid:
        raise ConfigurationError("the refined bound needs an i.i.d. composition")
    if inputs.stats.point_mass:
        return 0.0
    m = inputs.m
    a_m, b_m = inputs.a_m, inputs.smoothing_T
    lead = (C_K4 * inputs.stats.k4 + C_LAMBDA3_SQ * inputs.abs_lambda3 ** 2) / m
    main = PSI_FACTOR * _log_grid_integral(cf_modulus, a_m, b_m)
    return lead + main + float(sum(remainder_terms_r2(inputs, cf_modulus).values()))


# ---------------------------------------------------------------------------
# Adaptive tail bounds
# ---------------------------------------------------------------------------
def _log_loss_gap(xi, spec: MechanismSpec):
    """Delta(xi) = log(p + (1 - p) e^{-(mu xi - mu^2/2)}), decreasing in xi."""
    u = spec.mu * np.asarray(xi, dtype=float) - 0.5 * spec.mu ** 2
    return np.logaddexp(math.log(spec.p), math.log1p(-spec.p) - u)


def _excess(a: float, spec: MechanismSpec) -> float:
    """e(a) = int_a^inf (Delta(a) - Delta(xi)) phi(xi) dxi >= 0."""
    gap_a = float(_log_loss_gap(a, spec))
    return checked_quad(lambda xi: (gap_a - float(_log_loss_gap(xi, spec))) * stats.norm.pdf(xi),
                        a, a + GAUSSIAN_TRUNCATION_SD, "truncation excess e(a)")


def _mills_point(a: float) -> float:
    """a+ = phi(a) / (1 - Phi(a)) in log space."""
    return math.exp(stats.norm.logpdf(a) - stats.norm.logsf(a))


def _check_subsampled_gaussian(spec: MechanismSpec) -> None:
    if spec.kind is not MechanismKind.SUBSAMPLED_GAUSSIAN:
        raise BoundUnavailableError(f"the Gaussian tail bound does not apply to {spec.kind.value!r}")
    if spec.is_identity:
        raise DegenerateCompositionError("PLLRs are identically zero")
    if spec.p >= 1.0:
        raise BoundUnavailableError("the Gaussian tail bound needs p < 1")


@lru_cache(maxsize=1024)
def select_truncation_point(spec: MechanismSpec) -> float:
    """Smallest a in [0, TRUNCATION_SEARCH_MAX] with e(a) = -E[X]/2.

    If e(0) already lies below the target, a = 0 is admissible and returned.
    """
    _check_subsampled_gaussian(spec)
    target = -0.5 * pllr_moments(spec, PLLRBranch.PRIMARY, Variable.X).mean
    if not target > 0:
        raise BoundUnavailableError("E[X] is not negative")

    grid = np.linspace(0.0, TRUNCATION_SEARCH_MAX, TRUNCATION_SCAN_POINTS)
    values = np.array([_excess(a, spec) for a in grid]) - target
    if values[0] <= 0:
        return 0.0
    crossing = np.flatnonzero(values <= 0)
    if crossing.size == 0:
        raise BoundUnavailableError(f"no truncation point in [0, {TRUNCATION_SEARCH_MAX}] makes eta positive")
    j = int(crossing[0])
    a = optimize.brentq(lambda x: _excess(x, spec) - target, grid[j - 1], grid[j], xtol=ROOT_XTOL)
    logger.debug("truncation point for %s: a=%.6g", spec, a)
    return float(a)


def tail_params(spec: MechanismSpec, a: float | None = None) -> TailBoundParams:
    _check_subsampled_gaussian(spec)
    if a is None:
        a = select_truncation_point(spec)
    if a < 0:
        raise ConfigurationError(f"truncation point must be >= 0, got {a}")
    mu, p = spec.mu, spec.p
    a_plus = _mills_point(a)
    mean = pllr_moments(spec, PLLRBranch.PRIMARY, Variable.X).mean
    eta = -(mean + _excess(a, spec))

    top = logsumexp([math.log1p(-p), math.log(p) + mu * a - 0.5 * mu ** 2])
    sigma_a = (top + mu * (a_plus - a) - math.log1p(-p)) ** 2 / 4.0
    candidates = [sigma_a, mu ** 2]
    window = stats.norm.cdf(a_plus) - stats.norm.cdf(a)
    if 0.0 < window < 1.0:
        candidates.append(abs((a_plus - a) ** 2 * mu ** 2 / (2.0 * math.log(window))))
    return TailBoundParams(a=float(a), a_plus=a_plus, eta=float(eta), tau_sq=float(max(candidates)))


def gaussian_tail_bound(spec: MechanismSpec, m: int, epsilon, a: float | None = None):
    """Upper bound on P(sum_i X_i >= epsilon) for the Primary X of a subsampled Gaussian."""
    params = tail_params(spec, a)
    if not params.eta > 0:
        raise BoundUnavailableError(f"eta(a) = {params.eta:.3g} is not positive at a = {params.a:.3g}")
    eps = np.asarray(epsilon, dtype=float)
    gap = eps + m * params.eta
    out = np.where(gap > 0, 2.0 * np.exp(-gap ** 2 / (8.0 * m * params.tau_sq)), 2.0)
    return float(out) if out.ndim == 0 else out


def laplace_tail_bound(spec: MechanismSpec, m: int, epsilon):
    """Upper bound on the tail of both PLLR sums of a subsampled Laplace composition."""
    if spec.kind is not MechanismKind.SUBSAMPLED_LAPLACE:
        raise BoundUnavailableError(f"the Laplace tail bound does not apply to {spec.kind.value!r}")
    if spec.is_identity:
        raise DegenerateCompositionError("PLLRs are identically zero (tau^2 = 0)")
    mu, p = spec.mu, spec.p
    eta = -max(pllr_moments(spec, branch, Variable.X).mean for branch in PLLRBranch)
    if not eta > 0:
        raise BoundUnavailableError(f"eta = {eta:.3g} is not positive")
    tau_sq = (math.log1p(p * math.expm1(mu)) - math.log1p(p * math.expm1(-mu))) ** 2
    eps = np.asarray(epsilon, dtype=float)
    gap = eps + m * eta
    out = np.where(gap > 0, np.exp(-2.0 * gap ** 2 / (m * tau_sq)), 1.0)
    return float(out) if out.ndim == 0 else out


def tail_probability_bound(spec: MechanismSpec, branch: PLLRBranch, m: int, epsilon):
    """Dispatch to the tail bound covering the X sum of ``branch``, if any."""
    if spec.kind is MechanismKind.SUBSAMPLED_LAPLACE:
        return laplace_tail_bound(spec, m, epsilon)
    if spec.kind is MechanismKind.SUBSAMPLED_GAUSSIAN and PLLRBranch(branch) is PLLRBranch.PRIMARY:
        return gaussian_tail_bound(spec, m, epsilon)
    raise BoundUnavailableError(f"no tail bound for {spec.kind.value!r} on the {PLLRBranch(branch).value} branch")


def tail_cdf_gap_bound(tail_probability, g_tail):
    """Bound on |F(eps) - G(eps)| from an upper bound on P(S >= eps) and g = 1 - G(eps)."""
    tail = np.minimum(np.asarray(tail_probability, dtype=float), 1.0)
    g = np.asarray(g_tail, dtype=float)
    return np.maximum(np.abs(g), np.abs(tail - g))


def edgeworth_error_bound(uniform: float, g_tail, tail_probability=None):
    """Delta_{m,1}(eps): the uniform bound, tightened by the tail-based gap where available."""
    g = np.asarray(g_tail, dtype=float)
    out = np.full_like(g, float(uniform))
    if tail_probability is not None:
        out = np.minimum(out, tail_cdf_gap_bound(tail_probability, g))
    return out
