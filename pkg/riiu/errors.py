"""
    Exceptions and warnings raised across riiu.
"""

__all__ = [
    "InsufficientDataError",
    "ConvergenceError",
    "IllConditionedError",
    "NoMatchError",
    "NotApplicableError",
    "EnvironmentStateError",
    "DivergenceError",
    "DegenerateSpectrumWarning",
]


class InsufficientDataError(ValueError):
    """Fewer samples than a statistic needs."""


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of sweeps."""


class IllConditionedError(ValueError):
    """A covariance is singular or not positive definite."""


class NoMatchError(ValueError):
    """No configuration meets the requested parameter budget."""


class NotApplicableError(ValueError):
    """A metric was requested on data it is not defined for."""


class EnvironmentStateError(RuntimeError):
    """An environment was stepped in a state that does not allow it."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


class DegenerateSpectrumWarning(RuntimeWarning):
    """The eigengap at the projection rank is numerically zero."""
