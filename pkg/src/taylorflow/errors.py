"""Exception hierarchy for taylorflow.

Two families matter to callers:

    ConfigError     bad inputs (scenario files, flow kinds, orders, registry names)
    NumericalError  the mathematics failed (singular matrices, domain violations)

The CLI maps them to exit codes 2 and 3 respectively.
"""

from __future__ import annotations


class TaylorflowError(Exception):
    """Base class for all taylorflow errors."""


class ConfigError(TaylorflowError, ValueError):
    """Invalid configuration, scenario or argument."""


class InvalidOrderError(ConfigError):
    """Expansion order outside the range a flow supports."""


class NotAffineError(ConfigError):
    """An affine measurement model was required."""


class NumericalError(TaylorflowError, ArithmeticError):
    """A numerical operation could not be carried out."""


class ContextMismatchError(NumericalError, ValueError):
    """Polynomials from different DA contexts were combined."""


class DomainError(NumericalError):
    """An intrinsic was expanded at a point outside its domain."""


class SingularMatrixError(NumericalError):
    """Matrix is singular, ill-conditioned, or not positive definite."""


class IndefiniteMatrixError(NumericalError):
    """Matrix has a materially negative eigenvalue."""


class GridResolutionError(NumericalError):
    """Grid posterior failed its normalization or coverage checks."""


class NonFiniteStateError(NumericalError):
    """The integrator produced a non-finite particle state."""

    def __init__(self, particle: int, lam: float, message: str | None = None) -> None:
        self.particle = particle
        self.lam = lam
        super().__init__(
            message or f"Non-finite state for particle {particle} at lambda={lam:.6g}"
        )
