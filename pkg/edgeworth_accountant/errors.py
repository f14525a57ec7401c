"""Exception hierarchy for the Edgeworth accountant."""
from __future__ import annotations


class AccountantError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(AccountantError, ValueError):
    """Invalid mechanism, request or flag values."""


class NumericalError(AccountantError, ArithmeticError):
    """A numerical routine failed to reach its tolerance."""


class QuadratureError(NumericalError):
    """Adaptive quadrature did not converge for a named sub-term."""

    def __init__(self, term: str, value: float, abserr: float, tolerance: float):
        self.term = term
        self.value = value
        self.abserr = abserr
        self.tolerance = tolerance
        super().__init__(
            f"quadrature for {term!r} did not converge: value={value:.6g}, "
            f"error estimate={abserr:.3g} > tolerance={tolerance:.3g}"
        )


class RootBracketError(NumericalError):
    """A monotone curve could not be bracketed below the target."""

    def __init__(self, target: float, bracket: tuple[float, float], values: tuple[float, float]):
        self.target = target
        self.bracket = bracket
        self.values = values
        super().__init__(
            f"no root of curve = {target:.6g} in [{bracket[0]:.6g}, {bracket[1]:.6g}] "
            f"(curve values {values[0]:.6g}, {values[1]:.6g})"
        )


class OracleError(NumericalError):
    """The FFT oracle grid would exceed its memory cap."""


class BoundUnavailableError(AccountantError):
    """An adaptive tail bound does not apply; fall back to the uniform bound."""


class DegenerateCompositionError(AccountantError):
    """Every PLLR in the composition is a point mass."""
