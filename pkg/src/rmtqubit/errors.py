"""Exception types shared across the package.

The CLI maps these onto exit codes, so library code raises the most
specific one that applies.
"""


class RmtQubitError(Exception):
    """Base class for all package errors."""


class ConfigError(RmtQubitError, ValueError):
    """Invalid parameters or configuration (CLI exit code 2)."""


class NumericalError(RmtQubitError, ArithmeticError):
    """A numerical routine failed to reach its contract (CLI exit code 3)."""


class QuadratureError(NumericalError):
    """Quadrature did not reach the requested tolerance.

    ``estimate`` carries the achieved error estimate when one exists.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class CheckpointError(RmtQubitError, OSError):
    """Missing, corrupted, or mismatched checkpoint data (CLI exit code 4)."""
