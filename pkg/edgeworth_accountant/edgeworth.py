"""Edgeworth approximations of the CDF of a sum of PLLRs.

The order-k series of the standardized sum is written in probabilists' Hermite form

    E_{m,k}(x) = Phi(x) - phi(x) * sum_n c_n He_n(x),

and the rescaled series is G_{m,k}(x) = E_{m,k}((x - M_m) / B_m). Order 0 is the
normal (CLT / GDP) approximation. Raw values are returned; they can leave [0, 1]
in the far tails and are clamped by the accountant only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import hermite_e
from scipy.special import ndtr

from .config import EDGEWORTH_ORDERS
from .errors import ConfigurationError
from .mechanisms import CompositionStats, PLLRBranch, Variable

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _phi(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def _as_output(values, x):
    return float(values) if np.ndim(x) == 0 else values


@dataclass(frozen=True)
class EdgeworthSeries:
    order: int
    stats: CompositionStats
    variable: Variable = Variable.X
    branch: PLLRBranch = PLLRBranch.PRIMARY

    def __post_init__(self):
        if self.order not in EDGEWORTH_ORDERS:
            raise ConfigurationError(f"Edgeworth order must be one of {EDGEWORTH_ORDERS}, got {self.order}")

    @property
    def hermite_coefficients(self) -> np.ndarray:
        """Coefficients c_n of the correction polynomial, lowest degree first."""
        c = np.zeros(9)
        s = self.stats
        if self.order == 0 or s.point_mass:
            return c
        k3 = s.standardized_cumulant(3)
        c[2] = k3 / 6.0
        if self.order >= 2:
            k4 = s.standardized_cumulant(4)
            c[3] += k4 / 24.0
            c[5] += k3 ** 2 / 72.0
            if self.order >= 3:
                k5 = s.standardized_cumulant(5)
                c[4] += k5 / 120.0
                c[6] += k3 * k4 / 144.0
                c[8] += k3 ** 3 / 1296.0
        return c

    def standardize(self, x):
        return (np.asarray(x, dtype=float) - self.stats.mean) / self.stats.b


def edgeworth_cdf_standardized(series: EdgeworthSeries, x):
    """Order-k series value at the standardized point ``x`` (scalar or array)."""
    xs = np.asarray(x, dtype=float)
    out = ndtr(xs) - _phi(xs) * hermite_e.hermeval(xs, series.hermite_coefficients)
    return _as_output(out, x)


def edgeworth_sf_standardized(series: EdgeworthSeries, x):
    """1 - E_{m,k}(x), evaluated without cancellation in the upper tail."""
    xs = np.asarray(x, dtype=float)
    out = ndtr(-xs) + _phi(xs) * hermite_e.hermeval(xs, series.hermite_coefficients)
    return _as_output(out, x)


def edgeworth_pdf_standardized(series: EdgeworthSeries, x):
    """Derivative of the standardized series: phi(x) (1 + sum_n c_n He_{n+1}(x))."""
    xs = np.asarray(x, dtype=float)
    # x He_n - He_n' = He_{n+1}
    shifted = np.concatenate([[0.0], series.hermite_coefficients])
    out = _phi(xs) * (1.0 + hermite_e.hermeval(xs, shifted))
    return _as_output(out, x)


def edgeworth_cdf_rescaled(series: EdgeworthSeries, x):
    """G_{m,k}(x); a zero-variance composition gives the point-mass step 1{x >= M_m}."""
    if series.stats.point_mass:
        out = np.where(np.asarray(x, dtype=float) >= series.stats.mean, 1.0, 0.0)
        return _as_output(out, x)
    return edgeworth_cdf_standardized(series, series.standardize(x))


def edgeworth_sf_rescaled(series: EdgeworthSeries, x):
    """1 - G_{m,k}(x)."""
    if series.stats.point_mass:
        out = np.where(np.asarray(x, dtype=float) >= series.stats.mean, 0.0, 1.0)
        return _as_output(out, x)
    return edgeworth_sf_standardized(series, series.standardize(x))
