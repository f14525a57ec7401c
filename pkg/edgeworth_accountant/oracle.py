"""Desk-scale ground truth for PLLR sums.

Near-exact laws of m-fold compositions by grid discretization and FFT convolution,
a seeded Monte Carlo tail estimator, and the characteristic-function modulus of a
discretized step for the i.i.d. refined bound. These are test instruments; nothing
here is a privacy proof.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .config import (
    CF_STEP_GRID_SIZE,
    DEFAULT_GRID_SIZE,
    MAX_GRID_SIZE,
    MC_BLOCK_ELEMENTS,
    MC_MIN_SAMPLES,
    ORACLE_EDGE_MASS,
    ORACLE_WINDOW_SD,
)
from .errors import ConfigurationError, OracleError
from .mechanisms import (
    MechanismSpec,
    PLLRBranch,
    PLLRDistribution,
    Variable,
    composition_branches,
    pllr_moments,
    step_branch,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Histogram law on the bins [x_j - h/2, x_j + h/2], x_j = (offset + j) * spacing."""
    spacing: float
    offset: int
    mass: np.ndarray

    @property
    def n(self) -> int:
        return self.mass.size

    @property
    def lo(self) -> float:
        return self.offset * self.spacing

    @property
    def hi(self) -> float:
        return (self.offset + self.n - 1) * self.spacing

    @property
    def values(self) -> np.ndarray:
        return (self.offset + np.arange(self.n)) * self.spacing

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.mass) / self.total_mass)

    @property
    def variance(self) -> float:
        """Variance of the histogram density (bin variance h^2/12 included)."""
        centred = self.values - self.mean
        return float(np.dot(centred ** 2, self.mass) / self.total_mass + self.spacing ** 2 / 12.0)

    def _edges(self) -> np.ndarray:
        return self.lo - 0.5 * self.spacing + self.spacing * np.arange(self.n + 1)

    def cdf(self, x):
        cum = np.concatenate([[0.0], np.cumsum(self.mass)])
        out = np.interp(np.asarray(x, dtype=float), self._edges(), cum)
        return float(out) if np.ndim(x) == 0 else out

    def sf(self, x):
        tail = np.concatenate([np.cumsum(self.mass[::-1])[::-1], [0.0]])
        out = np.interp(np.asarray(x, dtype=float), self._edges(), tail)
        return float(out) if np.ndim(x) == 0 else out

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        j = np.floor((x - self._edges()[0]) / self.spacing).astype(np.int64)
        inside = (j >= 0) & (j < self.n)
        out = np.where(inside, self.mass[np.clip(j, 0, self.n - 1)] / self.spacing, 0.0)
        return float(out) if out.ndim == 0 else out

    def edge_mass(self, fraction: float = 1.0 / 16.0) -> float:
        """Mass in the outer ``fraction`` of bins on either side."""
        k = max(1, int(self.n * fraction))
        return float(self.mass[:k].sum() + self.mass[-k:].sum())

    def circular(self) -> np.ndarray:
        """Masses placed at index (value / spacing) mod n."""
        return np.roll(self.mass, self.offset % self.n)


def point_mass_grid(value: float = 0.0, spacing: float = 1.0) -> GridDensity:
    return GridDensity(spacing, int(round(value / spacing)), np.ones(1))


def discretize(dist: PLLRDistribution, spacing: float, n: int, center: float | None = None) -> GridDensity:
    """Bin masses from exact CDF differences, so atoms land in their bins."""
    if n < 1 or not spacing > 0:
        raise ConfigurationError("grid needs n >= 1 and a positive spacing")
    if center is None:
        center = pllr_moments(dist.spec, dist.branch, dist.variable).mean
    offset = int(round(center / spacing)) - n // 2
    edges = (offset - 0.5 + np.arange(n + 1)) * spacing
    mass = np.diff(dist.cdf(edges))
    return GridDensity(spacing, offset, np.clip(mass, 0.0, None))


def _spectrum_power(spectrum: np.ndarray, m: int) -> np.ndarray:
    """spectrum ** m by repeated squaring."""
    result = np.ones_like(spectrum)
    base = spectrum.copy()
    while m:
        if m & 1:
            result *= base
        m >>= 1
        if m:
            base *= base
    return result


def _from_circular(circ: np.ndarray, spacing: float, center: float) -> GridDensity:
    n = circ.size
    offset = int(round(center / spacing)) - n // 2
    mass = np.roll(circ, -(offset % n))
    return GridDensity(spacing, offset, np.clip(mass, 0.0, None))


def convolve_heterogeneous(steps: Sequence[tuple[GridDensity, int]]) -> GridDensity:
    """Law of the sum of ``count`` copies of each step; all grids share spacing and size."""
    if not steps:
        raise ConfigurationError("nothing to convolve")
    spacing, n = steps[0][0].spacing, steps[0][0].n
    spectrum = np.ones(n // 2 + 1, dtype=complex)
    center = 0.0
    for grid, count in steps:
        if grid.n != n or not math.isclose(grid.spacing, spacing, rel_tol=1e-12):
            raise ConfigurationError("grids must share spacing and size")
        if count < 1:
            raise ConfigurationError(f"counts must be >= 1, got {count}")
        spectrum *= _spectrum_power(np.fft.rfft(grid.circular()), int(count))
        center += count * grid.mean
    return _from_circular(np.fft.irfft(spectrum, n), spacing, center)


def convolve_m_fold(step: GridDensity, m: int) -> GridDensity:
    if m < 1:
        raise ConfigurationError(f"m must be >= 1, got {m}")
    if m == 1:
        return step
    return convolve_heterogeneous([(step, m)])


def _step_laws(composition: Sequence[tuple[MechanismSpec, int]], branch: PLLRBranch,
               variable: Variable) -> list[tuple[PLLRDistribution, int]]:
    return [(PLLRDistribution(spec, step_branch(spec, branch), variable), int(count))
            for spec, count in composition]


def composition_oracle(composition: Sequence[tuple[MechanismSpec, int]], branch: PLLRBranch,
                       variable: Variable, grid_size: int = DEFAULT_GRID_SIZE) -> GridDensity:
    """Grid law of the PLLR sum of ``variable`` on ``branch`` for a composition."""
    laws = [(d, c) for d, c in _step_laws(composition, branch, variable) if not d.point_mass]
    if not laws:
        return point_mass_grid(0.0)

    profiles = [(pllr_moments(d.spec, d.branch, d.variable), c) for d, c in laws]
    center = sum(c * pr.mean for pr, c in profiles)
    b_m = math.sqrt(sum(c * pr.variance for pr, c in profiles))
    step_range = 0.0
    for (d, _), (pr, _) in zip(laws, profiles):
        lo, hi = d.value_window()
        step_range = max(step_range, abs(lo - pr.mean), abs(hi - pr.mean))
    half_width = ORACLE_WINDOW_SD * b_m + step_range
    n = int(grid_size)
    spacing = 2.0 * half_width / n

    while True:
        grids = [(discretize(d, spacing, n, pr.mean), c) for (d, c), (pr, _) in zip(laws, profiles)]
        total = convolve_heterogeneous(grids)
        overflow = total.edge_mass()
        if overflow <= ORACLE_EDGE_MASS:
            logger.debug("oracle %s/%s: n=%d spacing=%.3g mass=%.12f", PLLRBranch(branch).value,
                         Variable(variable).value, n, spacing, total.total_mass)
            return total
        if 2 * n > MAX_GRID_SIZE:
            raise OracleError(f"edge mass {overflow:.3g} still above {ORACLE_EDGE_MASS:g} at grid size {n}")
        logger.info("oracle window overflow (edge mass %.3g); doubling grid to %d", overflow, 2 * n)
        n *= 2


def privacy_curve_delta(y_law: GridDensity, epsilon):
    """delta(eps) = sum_{y > eps} P_Y(y) (1 - e^{eps - y}) for eps >= 0."""
    eps = np.asarray(epsilon, dtype=float)
    y = y_law.values
    positive = y > 0
    ys, ps = y[positive], y_law.mass[positive]
    tail = np.concatenate([np.cumsum(ps[::-1])[::-1], [0.0]])
    tilted = np.concatenate([np.cumsum((ps * np.exp(-ys))[::-1])[::-1], [0.0]])
    j = np.searchsorted(ys, eps, side="right")
    # past the last atom both sums are 0, while e^eps may already be inf
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.where(tilted[j] == 0, tail[j], tail[j] - np.exp(eps) * tilted[j])
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def oracle_delta(composition: Sequence[tuple[MechanismSpec, int]], epsilon,
                 grid_size: int = DEFAULT_GRID_SIZE):
    """Oracle delta(eps) of the composition, maximised over branches."""
    eps = np.asarray(epsilon, dtype=float)
    if np.any(eps < 0):
        raise ConfigurationError("epsilon must be >= 0")
    branches = composition_branches(spec for spec, _ in composition)
    out = np.max([privacy_curve_delta(composition_oracle(composition, branch, Variable.Y, grid_size), eps)
                  for branch in branches], axis=0)
    return float(out) if out.ndim == 0 else out


def mc_tail(spec: MechanismSpec, branch: PLLRBranch, variable: Variable, m: int, threshold: float,
            n_samples: int, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate of P(sum_{i<=m} V_i >= threshold) with its binomial standard error."""
    if n_samples < MC_MIN_SAMPLES:
        raise ConfigurationError(f"n_samples must be >= {MC_MIN_SAMPLES}, got {n_samples}")
    if m < 1:
        raise ConfigurationError(f"m must be >= 1, got {m}")
    dist = PLLRDistribution(spec, branch, variable)
    rng = np.random.Generator(np.random.Philox(seed))
    hits = 0
    done = 0
    while done < n_samples:
        rows = min(n_samples - done, max(1, MC_BLOCK_ELEMENTS // m))
        sums = np.zeros(rows)
        left = m
        while left:
            cols = min(left, max(1, MC_BLOCK_ELEMENTS // rows))
            sums += dist.sample(rng, (rows, cols)).sum(axis=1)
            left -= cols
        hits += int(np.count_nonzero(sums >= threshold))
        done += rows
    estimate = hits / n_samples
    return estimate, math.sqrt(estimate * (1.0 - estimate) / n_samples)


def discretize_step(dist: PLLRDistribution, n: int = CF_STEP_GRID_SIZE) -> GridDensity:
    """Single-step grid over the step's own value window."""
    lo, hi = dist.value_window()
    if not hi > lo:
        return point_mass_grid(lo)
    spacing = (hi - lo) / (n - 2)
    return discretize(dist, spacing, n, center=0.5 * (lo + hi))


def cf_modulus(step_density: GridDensity, m: int, scale: float | None = None) -> Callable:
    """t -> |f_step(t / B_m)|^m for the standardized i.i.d. sum.

    The step CF is that of the histogram density (bin masses times sinc(s h / 2)),
    which decays like an absolutely continuous law. ``scale`` defaults to
    sqrt(m * variance) of the histogram.
    """
    keep = step_density.mass > 0
    weights = step_density.mass[keep] / step_density.total_mass
    x = step_density.values[keep] - step_density.mean
    h = step_density.spacing
    b_m = math.sqrt(m * step_density.variance) if scale is None else float(scale)

    def modulus(t):
        s = np.atleast_1d(np.asarray(t, dtype=float)) / b_m
        out = np.empty_like(s)
        rows = max(1, MC_BLOCK_ELEMENTS // max(1, x.size))
        for start in range(0, s.size, rows):
            block = s[start:start + rows]
            phase = np.exp(1j * np.outer(block, x)) @ weights
            # np.sinc(v) = sin(pi v) / (pi v)
            single = np.abs(phase) * np.abs(np.sinc(block * h / (2.0 * np.pi)))
            out[start:start + rows] = np.minimum(single, 1.0) ** m
        return float(out[0]) if np.ndim(t) == 0 else out

    return modulus
