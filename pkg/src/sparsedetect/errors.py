"""Exception hierarchy shared by all modules."""


class SparseDetectError(Exception):
    """Base class for errors raised by this package."""


class DomainError(SparseDetectError, ValueError):
    """An argument lies outside the domain where a formula is defined."""


class InfeasibleError(SparseDetectError, ValueError):
    """The constraint set of an extremal problem is empty.

    ``constraint`` names the constraint that cannot be met.
    """

    def __init__(self, message, constraint="Sobolev constraint"):
        super().__init__(message)
        self.constraint = constraint


class ConvergenceError(SparseDetectError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = dict(residuals or {})


class ConfigError(SparseDetectError, ValueError):
    """Inconsistent or invalid configuration.

    ``field`` is a dotted path to the offending entry when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DegenerateTailError(SparseDetectError, ArithmeticError):
    """The null tail probability is exactly 0 or 1, so HC cannot be normalized."""


class ResolutionError(SparseDetectError, ValueError):
    """A Monte Carlo sample is too small to resolve the requested tail."""
