"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so new error conditions should
subclass one of the three category errors rather than raising bare
``ValueError``.
"""


class EnspostError(Exception):
    """Base class for all package errors."""


class ConfigError(EnspostError):
    """Invalid, incomplete or contradictory run configuration."""


class DataError(EnspostError):
    """Invalid input data: bad files, bad shapes, violated invariants."""


class NumericalError(EnspostError):
    """A numerical procedure failed (factorization, degenerate model, ...)."""


class InsufficientHistoryError(DataError):
    """Not enough prior years available for an estimator."""
