"""PLLR families of (subsampled) noise-addition mechanisms and their per-step moments.

A mechanism step is described by the pair of base hypotheses
P = F and Q = (1 - p) F + p F(. - mu), with F the standard Gaussian or Laplace law.
The privacy-loss log-likelihood ratio of the pair is

    l(z) = log(1 - p + p exp(u(z))),

where u(z) is the log density ratio of the unsubsampled pair. The Primary branch
uses X = l(xi), Y = l(zeta); the Inverse branch X = -l(zeta), Y = -l(xi), with
xi ~ P and zeta ~ Q.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np
from scipy import integrate, stats

from .config import (
    BASE_TAIL_MASS,
    GAUSSIAN_TRUNCATION_SD,
    QUAD_EPSABS,
    QUAD_EPSREL,
    QUAD_ERROR_SLACK,
    QUAD_LIMIT,
)
from .errors import ConfigurationError, QuadratureError

logger = logging.getLogger(__name__)


class MechanismKind(str, Enum):
    SUBSAMPLED_GAUSSIAN = "subsampled-gaussian"
    SUBSAMPLED_LAPLACE = "subsampled-laplace"
    PURE_GAUSSIAN = "gaussian"


class PLLRBranch(str, Enum):
    """Member of the PLLR family: the sequence for f_p (Primary) or for f_p^{-1} (Inverse)."""
    PRIMARY = "primary"
    INVERSE = "inverse"


class Variable(str, Enum):
    X = "X"  # under the null
    Y = "Y"  # under the alternative


@dataclass(frozen=True)
class MechanismSpec:
    """One mechanism step: noise shift ``mu`` (1/sigma for Gaussians) and subsampling ``p``."""
    kind: MechanismKind
    mu: float
    p: float = 1.0

    def __post_init__(self):
        try:
            kind = MechanismKind(self.kind)
        except ValueError as exc:
            raise ConfigurationError(f"unknown mechanism kind {self.kind!r}") from exc
        mu, p = float(self.mu), float(self.p)
        if not math.isfinite(mu) or mu < 0:
            raise ConfigurationError(f"mu must be finite and >= 0, got {mu}")
        if not 0.0 <= p <= 1.0:
            raise ConfigurationError(f"p must lie in [0, 1], got {p}")
        if kind is MechanismKind.PURE_GAUSSIAN and p != 1.0:
            raise ConfigurationError("a pure Gaussian mechanism requires p = 1")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "p", p)

    @property
    def sigma(self) -> float:
        return math.inf if self.mu == 0.0 else 1.0 / self.mu

    @property
    def is_identity(self) -> bool:
        """True when every PLLR of the step is identically zero."""
        return self.mu == 0.0 or self.p == 0.0

    @property
    def is_gaussian(self) -> bool:
        return self.kind is not MechanismKind.SUBSAMPLED_LAPLACE

    def with_p(self, p: float) -> MechanismSpec:
        return replace(self, p=p)


def mechanism_from_sigma(kind: MechanismKind | str, sigma: float | None = None,
                         mu: float | None = None, p: float = 1.0) -> MechanismSpec:
    """Build a spec from either the noise multiplier ``sigma`` or the shift ``mu``."""
    if sigma is not None and mu is not None:
        raise ConfigurationError("give either sigma or mu, not both")
    if sigma is None and mu is None:
        raise ConfigurationError("one of sigma or mu is required")
    if sigma is not None:
        sigma = float(sigma)
        if not sigma > 0:
            raise ConfigurationError(f"sigma must be > 0, got {sigma}")
        mu = 0.0 if math.isinf(sigma) else 1.0 / sigma
    return MechanismSpec(kind, mu, p)


def branches_for(spec: MechanismSpec) -> tuple[PLLRBranch, ...]:
    if spec.kind is MechanismKind.PURE_GAUSSIAN:
        return (PLLRBranch.PRIMARY,)
    return (PLLRBranch.PRIMARY, PLLRBranch.INVERSE)


def composition_branches(specs: Iterable[MechanismSpec]) -> tuple[PLLRBranch, ...]:
    """Branches a composition is evaluated on; all-Gaussian compositions need only Primary."""
    if all(spec.kind is MechanismKind.PURE_GAUSSIAN for spec in specs):
        return (PLLRBranch.PRIMARY,)
    return (PLLRBranch.PRIMARY, PLLRBranch.INVERSE)


def step_branch(spec: MechanismSpec, branch: PLLRBranch) -> PLLRBranch:
    """Branch a single step contributes to ``branch`` of a mixed composition.

    A pure Gaussian trade-off is its own inverse, so its Primary PLLRs serve both.
    """
    branch = PLLRBranch(branch)
    return branch if branch in branches_for(spec) else PLLRBranch.PRIMARY


def _check_branch(spec: MechanismSpec, branch: PLLRBranch) -> None:
    if PLLRBranch(branch) not in branches_for(spec):
        raise ConfigurationError(f"branch {branch.value!r} is not defined for {spec.kind.value!r}")


def checked_quad(func: Callable[[float], float], a: float, b: float, term: str,
                 points: list[float] | None = None) -> float:
    """scipy quad with the package tolerances; raises QuadratureError on non-convergence."""
    value, abserr, *_ = integrate.quad(func, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
                                       limit=QUAD_LIMIT, points=points, full_output=1)
    tolerance = max(QUAD_EPSABS, QUAD_EPSREL * abs(value))
    if not np.isfinite(value) or abserr > QUAD_ERROR_SLACK * tolerance:
        raise QuadratureError(term, value, abserr, tolerance)
    return value


def checked_quad_vec(func: Callable[[float], np.ndarray], a: float, b: float, term: str,
                     points: list[float] | None = None) -> np.ndarray:
    value, abserr = integrate.quad_vec(func, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
                                       norm="max", limit=QUAD_LIMIT, points=points)
    tolerance = max(QUAD_EPSABS, QUAD_EPSREL * float(np.max(np.abs(value))))
    if not np.all(np.isfinite(value)) or abserr > QUAD_ERROR_SLACK * tolerance:
        raise QuadratureError(term, float(np.max(np.abs(value))), abserr, tolerance)
    return value


@dataclass(frozen=True)
class PLLRDistribution:
    """Law of one step's PLLR ``X`` or ``Y`` for a branch, as a transform of the base variable."""
    spec: MechanismSpec
    branch: PLLRBranch
    variable: Variable

    def __post_init__(self):
        _check_branch(self.spec, self.branch)

    # ---- structure ----
    @property
    def sign(self) -> float:
        return 1.0 if self.branch is PLLRBranch.PRIMARY else -1.0

    @property
    def under_alternative(self) -> bool:
        """Whether the base variable is drawn from the subsampled mixture Q."""
        return (self.branch is PLLRBranch.PRIMARY) == (self.variable is Variable.Y)

    @property
    def point_mass(self) -> bool:
        return self.spec.is_identity

    @property
    def _base(self):
        return stats.norm if self.spec.is_gaussian else stats.laplace

    def _base_pdf(self, z):
        base, mu, p = self._base, self.spec.mu, self.spec.p
        if not self.under_alternative:
            return base.pdf(z)
        return (1.0 - p) * base.pdf(z) + p * base.pdf(z - mu)

    def _base_cdf(self, z):
        base, mu, p = self._base, self.spec.mu, self.spec.p
        if not self.under_alternative:
            return base.cdf(z)
        return (1.0 - p) * base.cdf(z) + p * base.cdf(z - mu)

    def _base_sf(self, z):
        base, mu, p = self._base, self.spec.mu, self.spec.p
        if not self.under_alternative:
            return base.sf(z)
        return (1.0 - p) * base.sf(z) + p * base.sf(z - mu)

    # ---- the loss l(z) and its inverse ----
    def loss(self, z):
        """l(z) = log(1 - p + p e^{u(z)}), evaluated stably."""
        z = np.asarray(z, dtype=float)
        mu, p = self.spec.mu, self.spec.p
        if self.spec.is_gaussian:
            u = mu * z - 0.5 * mu ** 2
        else:
            u = np.abs(z) - np.abs(z - mu)
        if p == 1.0:
            return u
        with np.errstate(divide="ignore"):
            return np.logaddexp(np.log1p(-p), np.log(p) + u)

    @property
    def loss_range(self) -> tuple[float, float]:
        """Closed hull of the values of l (Gaussian: lower end excluded)."""
        mu, p = self.spec.mu, self.spec.p
        if self.spec.is_gaussian:
            with np.errstate(divide="ignore"):
                return float(np.log1p(-p)), math.inf
        lo, hi = self.loss(np.array([-1.0, mu + 1.0]))
        return float(lo), float(hi)

    def _u_of_loss(self, s):
        p = self.spec.p
        if p == 1.0:
            return s, np.ones_like(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            gap = np.expm1(s) + p  # e^s - (1 - p)
            return np.log(gap) - np.log(p), np.exp(s) / gap

    def _z_of_loss(self, s):
        """Inverse of l on its strictly increasing part, with dz/ds."""
        mu = self.spec.mu
        u, du = self._u_of_loss(s)
        if self.spec.is_gaussian:
            return (u + 0.5 * mu ** 2) / mu, du / mu
        return 0.5 * (u + mu), 0.5 * du

    def _loss_le(self, s, strict: bool = False):
        """P(l <= s), or P(l < s) when ``strict``."""
        s = np.asarray(s, dtype=float)
        lo, hi = self.loss_range
        z, _ = self._z_of_loss(np.clip(s, lo, hi))
        with np.errstate(invalid="ignore"):
            out = np.where(np.isnan(z), 0.0, self._base_cdf(np.nan_to_num(z, nan=-np.inf)))
        if strict:
            out = np.where(s <= lo, 0.0, np.where(s > hi, 1.0, out))
        else:
            out = np.where(s < lo, 0.0, np.where(s >= hi, 1.0, out))
        return out

    def _loss_gt(self, s, strict: bool = True):
        """P(l > s), or P(l >= s) when not ``strict``."""
        s = np.asarray(s, dtype=float)
        lo, hi = self.loss_range
        z, _ = self._z_of_loss(np.clip(s, lo, hi))
        with np.errstate(invalid="ignore"):
            out = np.where(np.isnan(z), 1.0, self._base_sf(np.nan_to_num(z, nan=-np.inf)))
        if strict:
            out = np.where(s < lo, 1.0, np.where(s >= hi, 0.0, out))
        else:
            out = np.where(s <= lo, 1.0, np.where(s > hi, 0.0, out))
        return out

    # ---- law of V = sign * l(Z) ----
    @property
    def support(self) -> tuple[float, float]:
        if self.point_mass:
            return 0.0, 0.0
        lo, hi = self.loss_range
        return (lo, hi) if self.sign > 0 else (-hi, -lo)

    @property
    def atoms(self) -> tuple[tuple[float, float], ...]:
        """(location, mass) pairs of the singular part."""
        if self.point_mass:
            return ((0.0, 1.0),)
        if self.spec.is_gaussian:
            return ()
        lo, hi = self.loss_range
        mass_lo = float(self._base_cdf(0.0))
        mass_hi = float(self._base_sf(self.spec.mu))
        return ((self.sign * lo, mass_lo), (self.sign * hi, mass_hi))

    def pdf(self, t):
        """Density of the absolutely continuous part."""
        t = np.asarray(t, dtype=float)
        if self.point_mass:
            return np.zeros_like(t)
        s = self.sign * t
        lo, hi = self.loss_range
        inside = (s > lo) & (s < hi)
        with np.errstate(all="ignore"):
            z, dz = self._z_of_loss(s)
            dens = self._base_pdf(np.nan_to_num(z)) * dz
        return np.where(inside, dens, 0.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        if self.point_mass:
            return np.where(t >= 0.0, 1.0, 0.0)
        if self.sign > 0:
            return self._loss_le(t)
        return self._loss_gt(-t, strict=False)

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        if self.point_mass:
            return np.where(t < 0.0, 1.0, 0.0)
        if self.sign > 0:
            return self._loss_gt(t)
        return self._loss_le(-t, strict=True)

    def base_window(self, tail_mass: float = BASE_TAIL_MASS) -> tuple[float, float]:
        """Base-axis interval holding all but ``tail_mass`` of Z."""
        base = self._base
        lo, hi = float(base.ppf(tail_mass)), float(base.isf(tail_mass))
        if self.under_alternative:
            hi += self.spec.mu
        return lo, hi

    def value_window(self, tail_mass: float = BASE_TAIL_MASS) -> tuple[float, float]:
        """Interval of V holding all but ``tail_mass`` of its law."""
        if self.point_mass:
            return 0.0, 0.0
        a, b = self.loss(np.array(self.base_window(tail_mass)))
        a, b = self.sign * float(a), self.sign * float(b)
        return min(a, b), max(a, b)

    def expect(self, h: Callable, term: str = "expectation", vector: bool = False):
        """E[h(V)] by Gauss-Kronrod quadrature on the base axis.

        Gaussian bases are truncated at GAUSSIAN_TRUNCATION_SD around each mixture
        component; Laplace losses are constant outside (0, mu), so their two atoms are
        added exactly and only the segment (0, mu) is integrated.
        """
        if self.point_mass:
            return np.asarray(h(0.0), dtype=float) if vector else float(h(0.0))
        quad = checked_quad_vec if vector else checked_quad
        mu = self.spec.mu

        def integrand(z):
            return h(self.sign * float(self.loss(z))) * float(self._base_pdf(z))

        if self.spec.is_gaussian:
            lo = -GAUSSIAN_TRUNCATION_SD
            hi = GAUSSIAN_TRUNCATION_SD + (mu if self.under_alternative else 0.0)
            points = [x for x in sorted({0.0, mu}) if lo < x < hi]
            return quad(integrand, lo, hi, term, points=points or None)
        total = quad(integrand, 0.0, mu, term)
        for loc, mass in self.atoms:
            total = total + mass * np.asarray(h(loc), dtype=float)
        return total

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.point_mass:
            return np.zeros(size)
        if self.spec.is_gaussian:
            z = rng.standard_normal(size)
        else:
            z = rng.laplace(size=size)
        if self.under_alternative:
            z = z + self.spec.mu * (rng.random(size) < self.spec.p)
        return self.sign * self.loss(z)


def pllr_density_pair(spec: MechanismSpec, branch: PLLRBranch) -> tuple[PLLRDistribution, PLLRDistribution]:
    """Laws (X under the null, Y under the alternative) of one step's PLLR for ``branch``."""
    branch = PLLRBranch(branch)
    _check_branch(spec, branch)
    return PLLRDistribution(spec, branch, Variable.X), PLLRDistribution(spec, branch, Variable.Y)


@dataclass(frozen=True)
class PLLRMomentProfile:
    """Per-step moments of one PLLR variable.

    ``central_moments`` holds gamma_2..gamma_6, ``abs_central_moments`` holds
    E|V - mean|^3 and E|V - mean|^4, ``cumulants`` holds k_3..k_5.
    """
    branch: PLLRBranch
    variable: Variable
    mean: float
    central_moments: tuple[float, float, float, float, float]
    abs_central_moments: tuple[float, float]
    abs_first: float
    cumulants: tuple[float, float, float]
    point_mass: bool = False

    def __post_init__(self):
        if self.central_moments[0] < 0 or self.abs_first < 0 or min(self.abs_central_moments) < 0:
            raise ConfigurationError("variance and absolute moments must be nonnegative")

    @classmethod
    def from_central_moments(cls, branch: PLLRBranch, variable: Variable, mean: float,
                             central: tuple[float, ...], abs_moments: tuple[float, float],
                             abs_first: float, point_mass: bool = False) -> PLLRMomentProfile:
        g2, g3, g4, g5, g6 = (float(c) for c in central)
        # clip quadrature noise so the profile stays admissible
        g2 = max(g2, 0.0)
        cumulants = (g3, g4 - 3.0 * g2 ** 2, g5 - 10.0 * g3 * g2)
        return cls(branch, variable, float(mean), (g2, g3, g4, g5, g6),
                   (max(float(abs_moments[0]), 0.0), max(float(abs_moments[1]), 0.0)),
                   max(float(abs_first), 0.0), cumulants, point_mass)

    @classmethod
    def point_mass_at_zero(cls, branch: PLLRBranch, variable: Variable) -> PLLRMomentProfile:
        return cls(branch, variable, 0.0, (0.0,) * 5, (0.0, 0.0), 0.0, (0.0,) * 3, True)

    @property
    def variance(self) -> float:
        return self.central_moments[0]

    def gamma(self, order: int) -> float:
        return self.central_moments[order - 2]

    def kappa(self, order: int) -> float:
        if order == 2:
            return self.variance
        return self.cumulants[order - 3]

    def abs_moment(self, order: int) -> float:
        if order == 1:
            return self.abs_first
        if order == 2:
            return self.variance
        return self.abs_central_moments[order - 3]

    def negated(self, branch: PLLRBranch | None = None, variable: Variable | None = None) -> PLLRMomentProfile:
        """Profile of -V: odd moments and odd cumulants flip sign."""
        g2, g3, g4, g5, g6 = self.central_moments
        k3, k4, k5 = self.cumulants
        return replace(
            self,
            branch=self.branch if branch is None else branch,
            variable=self.variable if variable is None else variable,
            mean=-self.mean,
            central_moments=(g2, -g3, g4, -g5, g6),
            cumulants=(-k3, k4, -k5),
        )


def _gaussian_profile(spec: MechanismSpec, branch: PLLRBranch, variable: Variable) -> PLLRMomentProfile:
    """Closed form for the unsubsampled pair: the PLLR is N(-/+ mu^2/2, mu^2)."""
    mu = spec.mu
    s2 = mu ** 2
    mean = -0.5 * s2 if variable is Variable.X else 0.5 * s2
    root = math.sqrt(2.0 / math.pi)
    return PLLRMomentProfile(
        branch, variable, mean,
        (s2, 0.0, 3.0 * s2 ** 2, 0.0, 15.0 * s2 ** 3),
        (2.0 * root * mu ** 3, 3.0 * s2 ** 2),
        root * mu,
        (0.0, 0.0, 0.0),
    )


@lru_cache(maxsize=4096)
def pllr_moments(spec: MechanismSpec, branch: PLLRBranch, variable: Variable) -> PLLRMomentProfile:
    """Per-step mean, central/absolute moments and cumulants of a PLLR by quadrature."""
    branch, variable = PLLRBranch(branch), Variable(variable)
    _check_branch(spec, branch)
    if spec.is_identity:
        return PLLRMomentProfile.point_mass_at_zero(branch, variable)
    if spec.kind is MechanismKind.PURE_GAUSSIAN:
        return _gaussian_profile(spec, branch, variable)

    dist = PLLRDistribution(spec, branch, variable)
    tag = f"{spec.kind.value}(mu={spec.mu:g}, p={spec.p:g}) {branch.value}/{variable.value}"
    mean = dist.expect(lambda v: v, term=f"mean of {tag}")
    powers = np.arange(2, 7)

    def central(v):
        d = v - mean
        a = abs(d)
        return np.concatenate([d ** powers, [a, a ** 3, a ** 4]])

    values = dist.expect(central, term=f"central moments of {tag}", vector=True)
    logger.debug("moments of %s: mean=%.6g variance=%.6g", tag, mean, values[0])
    return PLLRMomentProfile.from_central_moments(
        branch, variable, mean, tuple(values[:5]), (values[6], values[7]), values[5])


def profile_from_distribution(dist, branch: PLLRBranch = PLLRBranch.PRIMARY,
                              variable: Variable = Variable.X) -> PLLRMomentProfile:
    """Moment profile of an arbitrary scipy frozen distribution (synthetic compositions)."""
    mean = float(dist.mean())
    kw = dict(epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
    central = tuple(float(dist.expect(lambda x, k=k: (x - mean) ** k, **kw)) for k in range(2, 7))
    abs_moments = tuple(float(dist.expect(lambda x, k=k: abs(x - mean) ** k, **kw)) for k in (3, 4))
    abs_first = float(dist.expect(lambda x: abs(x - mean), **kw))
    return PLLRMomentProfile.from_central_moments(branch, variable, mean, central, abs_moments, abs_first)


@dataclass(frozen=True)
class CompositionStats:
    """Aggregates of an m-fold sum of independent PLLRs.

    ``lambdas`` are the average standardized cumulants lambda_{r,m} = (1/m) sum k_{r,j} / Bbar^r
    for r = 3, 4, 5; ``k3``/``k4`` the average standardized absolute moments and
    ``k3_tilde`` the corrected third one used by the uniform bound.
    """
    m: int
    mean: float
    b: float
    b_bar: float
    lambda3: float
    lambda4: float
    lambda5: float
    k3: float
    k3_tilde: float
    k4: float
    has_nonzero_third_moment: bool
    distinct_profiles: int
    point_mass: bool = False

    @property
    def is_iid(self) -> bool:
        return self.distinct_profiles == 1

    def standardized_cumulant(self, order: int) -> float:
        """Cumulant of order 3..5 of the standardized sum (x - M_m) / B_m."""
        lam = {3: self.lambda3, 4: self.lambda4, 5: self.lambda5}[order]
        return lam / self.m ** (0.5 * order - 1.0)


def composition_stats(profiles: Iterable[tuple[PLLRMomentProfile, int]]) -> CompositionStats:
    """Aggregate per-step profiles weighted by their counts.

    Identical profiles are merged first, so the cost is linear in the number of
    distinct profiles and the result does not depend on how counts are split.
    """
    counts: dict[PLLRMomentProfile, int] = {}
    for profile, count in profiles:
        count = int(count)
        if count < 1:
            raise ConfigurationError(f"step counts must be >= 1, got {count}")
        counts[profile] = counts.get(profile, 0) + count
    if not counts:
        raise ConfigurationError("composition is empty")

    m = sum(counts.values())
    mean = sum(c * pr.mean for pr, c in counts.items())
    b_sq = sum(c * pr.variance for pr, c in counts.items())
    third = any(pr.gamma(3) != 0.0 for pr in counts)
    if b_sq <= 0.0:
        logger.debug("composition of %d steps has zero variance", m)
        return CompositionStats(m, mean, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                                third, len(counts), point_mass=True)

    b_bar = math.sqrt(b_sq / m)

    def average(moment: Callable[[PLLRMomentProfile], float], power: int) -> float:
        return sum(c * moment(pr) for pr, c in counts.items()) / (m * b_bar ** power)

    k3 = average(lambda pr: pr.abs_moment(3), 3)
    return CompositionStats(
        m=m,
        mean=mean,
        b=math.sqrt(b_sq),
        b_bar=b_bar,
        lambda3=average(lambda pr: pr.kappa(3), 3),
        lambda4=average(lambda pr: pr.kappa(4), 4),
        lambda5=average(lambda pr: pr.kappa(5), 5),
        k3=k3,
        k3_tilde=k3 + average(lambda pr: pr.abs_first * pr.variance, 3),
        k4=average(lambda pr: pr.abs_moment(4), 4),
        has_nonzero_third_moment=third,
        distinct_profiles=len(counts),
    )
