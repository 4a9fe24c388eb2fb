"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific type that applies rather than bare ValueError.
"""


class PaftError(Exception):
    """Base class for all package errors."""


class DataError(PaftError, ValueError):
    """Malformed input data or a dataset that cannot support the model."""


class QuadratureError(PaftError, ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message, interval=None):
        super().__init__(message)
        self.interval = interval


class OptimizationError(PaftError, RuntimeError):
    """Optimizer could not produce a usable estimate."""


class ResamplingError(PaftError, RuntimeError):
    """Bootstrap or permutation resampling produced too many failures."""
