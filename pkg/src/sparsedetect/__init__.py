"""Minimax detection of sparse additive signals in the Gaussian sequence model."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    ConvergenceError,
    DegenerateTailError,
    DomainError,
    InfeasibleError,
    ResolutionError,
    SparseDetectError,
)

__all__ = [
    "__version__",
    "ConfigError",
    "ConvergenceError",
    "DegenerateTailError",
    "DomainError",
    "InfeasibleError",
    "ResolutionError",
    "SparseDetectError",
]
