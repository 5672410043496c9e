"""
Exception hierarchy for the spectral density toolkit.

Every error raised on purpose by the package derives from WTDensityError,
so callers (the CLI, the density scan workers) can separate numerical
failures from programming errors.
"""

from typing import Optional


class WTDensityError(Exception):
    """Base class for all errors raised by wt_density."""


class ConfigError(WTDensityError, ValueError):
    """
    Invalid run configuration.

    Args:
        field: Dotted path of the offending field (e.g. "operator.wvn.gamma").
        message: Human readable explanation.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class InvalidArgumentError(WTDensityError, ValueError):
    """A numeric argument violates a documented precondition."""


# ode-engine

class IntegrationError(WTDensityError):
    """The adaptive integrator could not advance the solution."""

    def __init__(self, message: str, x: Optional[float] = None):
        self.x = x
        super().__init__(message if x is None else f"{message} (at x={x:.6g})")


class StepSizeUnderflowError(IntegrationError):
    """Step size fell below the allowed minimum: stiffness or a singularity."""


class NonFiniteStateError(IntegrationError):
    """The state overflowed; the caller has to rescale the problem."""


# periodic-core

class BandStructureError(WTDensityError):
    """Band edges could not be resolved consistently."""


class BranchError(WTDensityError, ValueError):
    """The band index hint disagrees with the band structure."""


class EdgeDegeneracyError(WTDensityError):
    """The spectral point sits on a band edge where the Bloch pair degenerates."""


# reduction

class FrequencyConditionError(WTDensityError):
    """2aω/π is (numerically) an integer."""


class ResonanceProximityError(WTDensityError):
    """ε(μ) is too small: the point is at or next to a critical point."""


class NeighbourhoodError(WTDensityError, ValueError):
    """λ lies outside the admissible neighbourhood U(β, μ)."""


class NearResonantModeError(WTDensityError, ValueError):
    """A shifted frequency of an oscillatory integral is (almost) zero."""


class CriticalPointError(WTDensityError):
    """A critical-point target falls outside the band's quasi-momentum range."""


# levinson / spectral

class GrowthBoundViolation(WTDensityError):
    """A trajectory exceeded the a priori growth bound."""

    def __init__(self, message: str, x: float, ratio: float):
        self.x = x
        self.ratio = ratio
        super().__init__(f"{message} (x={x:.6g}, |u|/B={ratio:.6g})")


class ConvergenceError(WTDensityError):
    """A limit did not stabilize over the horizon schedule."""


class DegenerateCoefficientError(WTDensityError, ZeroDivisionError):
    """A_α or W vanishes where a quotient needs it."""
