"""The Edgeworth accountant: AEA estimates, EEAI intervals and epsilon(delta) inversion.

For each PLLR branch the privacy curve is

    delta(eps) = 1 - F_Y(eps) - e^eps (1 - F_X(eps)),

evaluated with Edgeworth approximations G in place of F (AEA), with the error bounds
added and subtracted (EEAI), or with the FFT oracle. Branches are combined by
their supremum and values are clamped to [0, 1] only at the output.
"""
from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, NamedTuple, Sequence

import numpy as np
import pandas as pd
from scipy import optimize, stats

from .bounds import UniformBoundInputs, edgeworth_error_bound, tail_probability_bound, uniform_bound_order1
from .config import (
    CONTAINMENT_GRID_POINTS,
    DEFAULT_EPS_BRACKET,
    DEFAULT_GRID_SIZE,
    DEFAULT_SMOOTHING_EPS,
    EDGEWORTH_ORDERS,
    EPS_BRACKET_CAP,
    ROOT_XTOL,
    num_threads,
)
from .edgeworth import EdgeworthSeries, edgeworth_sf_rescaled
from .errors import (
    AccountantError,
    BoundUnavailableError,
    ConfigurationError,
    DegenerateCompositionError,
    RootBracketError,
)
from .mechanisms import (
    CompositionStats,
    MechanismKind,
    MechanismSpec,
    PLLRBranch,
    Variable,
    composition_branches,
    composition_stats,
    pllr_moments,
    step_branch,
)
from .oracle import GridDensity, composition_oracle, privacy_curve_delta

logger = logging.getLogger(__name__)

Composition = Sequence[tuple[MechanismSpec, int]]


class Mode(str, Enum):
    AEA = "aea"
    EEAI = "eeai"
    ORACLE = "oracle"
    CLT = "clt"


@dataclass(frozen=True)
class Epsilon:
    value: float

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value > 0):
            raise ConfigurationError(f"epsilon must be finite and > 0, got {self.value}")


@dataclass(frozen=True)
class Delta:
    value: float

    def __post_init__(self):
        if not 0.0 < self.value < 1.0:
            raise ConfigurationError(f"delta must lie in (0, 1), got {self.value}")


def _normalize_composition(composition: Composition) -> tuple[tuple[MechanismSpec, int], ...]:
    items = []
    for spec, count in composition:
        if not isinstance(spec, MechanismSpec):
            raise ConfigurationError(f"expected a MechanismSpec, got {type(spec).__name__}")
        if int(count) != count or count < 1:
            raise ConfigurationError(f"step counts must be integers >= 1, got {count}")
        items.append((spec, int(count)))
    if not items:
        raise ConfigurationError("composition is empty")
    return tuple(items)


def parse_mode(value: Mode | str) -> Mode:
    try:
        return Mode(value)
    except ValueError as exc:
        raise ConfigurationError(f"unknown mode {value!r}") from exc


def _check_mode_order(mode: Mode, order: int) -> int:
    if mode is Mode.CLT:
        return 0
    if order not in EDGEWORTH_ORDERS:
        raise ConfigurationError(f"order must be one of {EDGEWORTH_ORDERS}, got {order}")
    if mode is Mode.EEAI and order != 1:
        raise ConfigurationError("EEAI intervals are only available at order 1")
    return order


@dataclass(frozen=True)
class AccountantRequest:
    composition: tuple[tuple[MechanismSpec, int], ...]
    target: Epsilon | Delta
    order: int = 1
    mode: Mode = Mode.AEA
    smoothing_eps: float = DEFAULT_SMOOTHING_EPS
    grid_size: int = DEFAULT_GRID_SIZE

    def __post_init__(self):
        object.__setattr__(self, "composition", _normalize_composition(self.composition))
        mode = parse_mode(self.mode)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "order", _check_mode_order(mode, int(self.order)))
        if not 0.0 < self.smoothing_eps < 1.0 / 3.0:
            raise ConfigurationError(f"smoothing_eps must lie in (0, 1/3), got {self.smoothing_eps}")

    @property
    def m(self) -> int:
        return sum(count for _, count in self.composition)

    def scaled(self, factor: int, p: float | None = None) -> AccountantRequest:
        """Repeat the composition ``factor`` times, optionally with a new sampling probability."""
        composition = tuple((spec if p is None or spec.kind is MechanismKind.PURE_GAUSSIAN else spec.with_p(p),
                             count * factor) for spec, count in self.composition)
        return replace(self, composition=composition)


@dataclass(frozen=True)
class PrivacyPoint:
    epsilon: float
    delta_lower: float | None
    delta_est: float
    delta_upper: float | None
    per_branch: dict[PLLRBranch, tuple[float | None, float, float | None]] = field(default_factory=dict)


class EpsilonEstimate(NamedTuple):
    eps_lower: float | None
    eps_est: float
    eps_upper: float | None


@dataclass(frozen=True)
class _BranchModel:
    branch: PLLRBranch
    x: EdgeworthSeries
    y: EdgeworthSeries
    x_uniform: float | None = None
    y_uniform: float | None = None
    tail_spec: MechanismSpec | None = None


def gdp_delta(mu: float, epsilon):
    """delta(eps) of mu-GDP: Phi(-eps/mu + mu/2) - e^eps Phi(-eps/mu - mu/2)."""
    eps = np.asarray(epsilon, dtype=float)
    if mu == 0:
        out = np.zeros_like(eps)
    else:
        out = stats.norm.cdf(-eps / mu + mu / 2) - np.exp(eps) * stats.norm.cdf(-eps / mu - mu / 2)
    return float(out) if out.ndim == 0 else out


def epsilon_search_bound(spec: MechanismSpec, m: int, delta: float) -> float | None:
    """Loose upper end of the epsilon search range for a homogeneous subsampled Gaussian."""
    if spec.kind is MechanismKind.SUBSAMPLED_LAPLACE or spec.is_identity:
        return None
    mu, p = spec.mu, spec.p
    candidates = []
    with np.errstate(divide="ignore", invalid="ignore"):
        z = stats.norm.isf(delta)
        candidates.append(m * np.log(p * delta / stats.norm.sf(z + mu)))
        z_m = stats.norm.isf(delta / math.sqrt(m))
        # the quantile of delta/sqrt(m) may underflow; keep the first term alone then
        if np.isfinite(z_m):
            candidates.append(np.log(delta / stats.norm.sf((z_m + mu) / math.sqrt(m))))
    # a candidate <= 0 only means that formula is vacuous at this (m, delta)
    positive = [float(c) for c in candidates if np.isfinite(c) and c > 0]
    return min(positive) if positive else None


def _e_times(eps: np.ndarray, values: np.ndarray) -> np.ndarray:
    """e^eps * values with 0 * inf read as 0."""
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.exp(eps) * values
    return np.where(values == 0, 0.0, out)


def _clamp(values):
    return None if values is None else np.clip(values, 0.0, 1.0)


def monotonicity_violations(values: np.ndarray, atol: float = 1e-12) -> int:
    """Number of grid steps where a clamped delta curve increases."""
    clamped = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    return int(np.count_nonzero(np.diff(clamped) > atol))


class EdgeworthAccountant:
    """Privacy curves of one composition in a given mode.

    Per-branch profiles, aggregates and uniform bounds are computed once at
    construction; every query after that is vectorised over epsilon.
    """

    def __init__(self, composition: Composition, order: int = 1, mode: Mode | str = Mode.AEA,
                 smoothing_eps: float = DEFAULT_SMOOTHING_EPS, grid_size: int = DEFAULT_GRID_SIZE):
        self.composition = _normalize_composition(composition)
        self.mode = parse_mode(mode)
        self.order = _check_mode_order(self.mode, int(order))
        self.smoothing_eps = smoothing_eps
        self.grid_size = grid_size
        self.branches = composition_branches(spec for spec, _ in self.composition)
        self._models: dict[PLLRBranch, _BranchModel] = {}
        self._oracle_laws: dict[PLLRBranch, GridDensity] = {}
        if self.mode is not Mode.ORACLE:
            for branch in self.branches:
                self._models[branch] = self._build(branch)

    @classmethod
    def from_request(cls, req: AccountantRequest) -> EdgeworthAccountant:
        return cls(req.composition, req.order, req.mode, req.smoothing_eps, req.grid_size)

    @property
    def m(self) -> int:
        return sum(count for _, count in self.composition)

    @property
    def homogeneous_spec(self) -> MechanismSpec | None:
        specs = {spec for spec, _ in self.composition}
        return specs.pop() if len(specs) == 1 else None

    def stats(self, branch: PLLRBranch, variable: Variable) -> CompositionStats:
        return composition_stats(
            (pllr_moments(spec, step_branch(spec, branch), variable), count) for spec, count in self.composition)

    def rescaled(self, factor: int, p: float | None = None) -> EdgeworthAccountant:
        req = AccountantRequest(self.composition, Epsilon(1.0), self.order, self.mode, self.smoothing_eps,
                                self.grid_size)
        return EdgeworthAccountant.from_request(req.scaled(factor, p))

    def _build(self, branch: PLLRBranch) -> _BranchModel:
        x_stats = self.stats(branch, Variable.X)
        y_stats = self.stats(branch, Variable.Y)
        model = _BranchModel(branch, EdgeworthSeries(self.order, x_stats, Variable.X, branch),
                             EdgeworthSeries(self.order, y_stats, Variable.Y, branch))
        if self.mode is not Mode.EEAI:
            return model
        x_uniform = uniform_bound_order1(UniformBoundInputs.from_stats(x_stats, self.smoothing_eps))
        y_uniform = uniform_bound_order1(UniformBoundInputs.from_stats(y_stats, self.smoothing_eps))
        tail_spec = self.homogeneous_spec
        if tail_spec is not None:
            try:
                tail_probability_bound(tail_spec, branch, self.m, 0.0)
            except (BoundUnavailableError, DegenerateCompositionError) as exc:
                logger.debug("no tail bound on %s branch: %s", branch.value, exc)
                tail_spec = None
        logger.debug("uniform bounds on %s branch at m=%d: X %.4g, Y %.4g",
                     branch.value, self.m, x_uniform, y_uniform)
        return replace(model, x_uniform=x_uniform, y_uniform=y_uniform, tail_spec=tail_spec)

    # ---- per-branch curves ----
    def _oracle_law(self, branch: PLLRBranch) -> GridDensity:
        if branch not in self._oracle_laws:
            self._oracle_laws[branch] = composition_oracle(self.composition, branch, Variable.Y, self.grid_size)
        return self._oracle_laws[branch]

    def branch_deltas(self, epsilon) -> dict[PLLRBranch, tuple[np.ndarray | None, np.ndarray, np.ndarray | None]]:
        """Raw (lower, estimate, upper) per branch; bounds are None outside EEAI mode."""
        eps = np.atleast_1d(np.asarray(epsilon, dtype=float))
        out = {}
        for branch in self.branches:
            if self.mode is Mode.ORACLE:
                out[branch] = (None, np.atleast_1d(privacy_curve_delta(self._oracle_law(branch), eps)), None)
                continue
            model = self._models[branch]
            gx = np.atleast_1d(edgeworth_sf_rescaled(model.x, eps))
            gy = np.atleast_1d(edgeworth_sf_rescaled(model.y, eps))
            est = gy - _e_times(eps, gx)
            if self.mode is not Mode.EEAI:
                out[branch] = (None, est, None)
                continue
            tail = None
            if model.tail_spec is not None:
                tail = tail_probability_bound(model.tail_spec, branch, self.m, eps)
            dx = edgeworth_error_bound(model.x_uniform, gx, tail)
            dy = model.y_uniform
            # true survival probabilities lie in [0, 1]; the interval always holds the estimate
            lower = np.maximum(gy - dy, 0.0) - _e_times(eps, np.minimum(gx + dx, 1.0))
            upper = np.minimum(gy + dy, 1.0) - _e_times(eps, np.maximum(gx - dx, 0.0))
            out[branch] = (np.minimum(lower, est), est, np.maximum(upper, est))
        return out

    def delta(self, epsilon) -> tuple[np.ndarray | None, np.ndarray, np.ndarray | None]:
        """Raw supremum over branches of (lower, estimate, upper)."""
        per_branch = self.branch_deltas(epsilon).values()
        est = np.max([v[1] for v in per_branch], axis=0)
        if self.mode is not Mode.EEAI:
            return None, est, None
        lower = np.max([v[0] for v in per_branch], axis=0)
        upper = np.max([v[2] for v in per_branch], axis=0)
        return lower, est, upper

    def privacy_point(self, epsilon: float) -> PrivacyPoint:
        per_branch = {
            branch: tuple(None if v is None else float(v[0]) for v in values)
            for branch, values in self.branch_deltas(epsilon).items()
        }
        lower, est, upper = self.delta(epsilon)
        return PrivacyPoint(
            epsilon=float(epsilon),
            delta_lower=None if lower is None else float(_clamp(lower)[0]),
            delta_est=float(_clamp(est)[0]),
            delta_upper=None if upper is None else float(_clamp(upper)[0]),
            per_branch=per_branch,
        )

    def delta_curve(self, eps_grid) -> pd.DataFrame:
        """Clamped curves on a grid: columns epsilon, delta_lower, delta_est, delta_upper."""
        eps = np.asarray(eps_grid, dtype=float)
        lower, est, upper = self.delta(eps)
        violations = monotonicity_violations(est)
        if violations:
            logger.warning("estimated delta curve increases at %d of %d grid steps", violations, eps.size - 1)
        nan = np.full(eps.shape, np.nan)
        return pd.DataFrame({
            "epsilon": eps,
            "delta_lower": nan if lower is None else _clamp(lower),
            "delta_est": _clamp(est),
            "delta_upper": nan if upper is None else _clamp(upper),
        })

    # ---- inversion ----
    def _initial_bracket(self, delta: float) -> float:
        spec = self.homogeneous_spec
        c = None if spec is None else epsilon_search_bound(spec, self.m, delta)
        return DEFAULT_EPS_BRACKET if c is None else c

    def _invert(self, curve: Callable[[np.ndarray], np.ndarray], delta: float, last: bool,
                name: str, required: bool = True) -> float | None:
        """Downward crossing of ``curve`` through ``delta`` on [0, C], widening C as needed."""
        if float(curve(np.zeros(1))[0]) <= delta:
            return 0.0
        upper = min(self._initial_bracket(delta), EPS_BRACKET_CAP)
        while True:
            grid = np.linspace(0.0, upper, CONTAINMENT_GRID_POINTS)
            values = curve(grid)
            above = values > delta
            crossings = np.flatnonzero(above[:-1] & ~above[1:])
            if crossings.size or upper >= EPS_BRACKET_CAP:
                break
            logger.debug("widening %s bracket to %.4g", name, 2.0 * upper)
            upper = min(2.0 * upper, EPS_BRACKET_CAP)
        if crossings.size == 0:
            if required:
                raise RootBracketError(delta, (0.0, upper), (float(values[0]), float(values[-1])))
            return None
        j = int(crossings[-1] if last else crossings[0])
        if values[j + 1] == delta:
            return float(grid[j + 1])
        return float(optimize.brentq(lambda e: float(curve(np.atleast_1d(e))[0]) - delta,
                                     grid[j], grid[j + 1], xtol=ROOT_XTOL))

    def epsilon(self, delta: float) -> EpsilonEstimate:
        delta = Delta(delta).value
        eps_est = self._invert(lambda e: self.delta(e)[1], delta, last=True, name="estimate")
        if self.mode is not Mode.EEAI:
            return EpsilonEstimate(None, eps_est, None)
        eps_lower = self._invert(lambda e: self.delta(e)[0], delta, last=False, name="lower")
        eps_upper = self._invert(lambda e: self.delta(e)[2], delta, last=True, name="upper", required=False)
        if eps_upper is None:
            logger.warning("upper delta bound stays above %.3g up to eps=%g; eps_upper is unbounded",
                           delta, EPS_BRACKET_CAP)
            eps_upper = math.inf
        return EpsilonEstimate(eps_lower, eps_est, eps_upper)


def delta_at_epsilon(req: AccountantRequest) -> PrivacyPoint:
    if not isinstance(req.target, Epsilon):
        raise ConfigurationError("delta_at_epsilon needs an Epsilon target")
    return EdgeworthAccountant.from_request(req).privacy_point(req.target.value)


def epsilon_at_delta(req: AccountantRequest) -> EpsilonEstimate:
    if not isinstance(req.target, Delta):
        raise ConfigurationError("epsilon_at_delta needs a Delta target")
    return EdgeworthAccountant.from_request(req).epsilon(req.target.value)


def delta_curve(req: AccountantRequest, eps_grid) -> pd.DataFrame:
    return EdgeworthAccountant.from_request(req).delta_curve(eps_grid)


# ---------------------------------------------------------------------------
# Curves over m
# ---------------------------------------------------------------------------
_RULE_PATTERNS = {
    "fixed": re.compile(r"^fixed:(?P<c>[0-9.eE+-]+)$"),
    "inv_sqrt": re.compile(r"^(?P<c>[0-9.eE+-]+)/sqrt\(m\)$"),
    "inv_sqrt_log": re.compile(r"^(?P<c>[0-9.eE+-]+)/sqrt\(m\*log ?m\)$"),
    "sqrt_log_ratio": re.compile(r"^(?P<c>[0-9.eE+-]+)\*sqrt\(log ?m ?/ ?m\)$"),
}


@dataclass(frozen=True)
class SamplingRule:
    """Sampling probability as a function of m: fixed:<p>, c/sqrt(m), c/sqrt(m*log m), c*sqrt(log m/m)."""
    kind: str
    coef: float

    @classmethod
    def parse(cls, text: str) -> SamplingRule:
        compact = text.strip().replace(" ", "")
        for kind, pattern in _RULE_PATTERNS.items():
            match = pattern.match(compact)
            if match:
                try:
                    return cls(kind, float(match.group("c")))
                except ValueError as exc:
                    raise ConfigurationError(f"bad coefficient in sampling rule {text!r}") from exc
        raise ConfigurationError(f"unrecognised sampling rule {text!r}")

    def __call__(self, m: int) -> float:
        with np.errstate(divide="ignore"):
            value = {
                "fixed": self.coef,
                "inv_sqrt": self.coef / math.sqrt(m),
                "inv_sqrt_log": self.coef / math.sqrt(m * math.log(m)) if m > 1 else math.inf,
                "sqrt_log_ratio": self.coef * math.sqrt(math.log(m) / m),
            }[self.kind]
        if not 0.0 <= value <= 1.0:
            raise ConfigurationError(f"sampling rule {self.kind} gives p = {value:.4g} at m = {m}")
        return value


@dataclass(frozen=True)
class CurvePoint:
    m: int
    p: float | None
    result: PrivacyPoint | EpsilonEstimate | None
    error: str | None = None


def _curve_point(req: AccountantRequest, m: int, rule: SamplingRule | None) -> CurvePoint:
    p = None
    try:
        p = None if rule is None else rule(m)
        scaled = req.scaled(m, p)
        acc = EdgeworthAccountant.from_request(scaled)
        if isinstance(req.target, Epsilon):
            return CurvePoint(m, p, acc.privacy_point(req.target.value))
        return CurvePoint(m, p, acc.epsilon(req.target.value))
    except AccountantError as exc:
        logger.error("curve point m=%d failed: %s", m, exc)
        return CurvePoint(m, p, None, f"{type(exc).__name__}: {exc}")


def privacy_curve(req: AccountantRequest, m_grid: Sequence[int], rule: SamplingRule | None = None,
                  threads: int | None = None) -> list[CurvePoint]:
    """Evaluate ``req`` with its composition repeated m times for each m of the grid.

    Points run on a thread pool capped by ``threads`` (default: EA_NUM_THREADS, read per call); the
    output keeps the order of ``m_grid``.
    """
    grid = [int(m) for m in m_grid]
    if not grid:
        raise ConfigurationError("m grid is empty")
    if any(m < 1 for m in grid):
        raise ConfigurationError("m grid values must be >= 1")
    workers = max(1, min(threads or num_threads(), len(grid)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda m: _curve_point(req, m, rule), grid))
