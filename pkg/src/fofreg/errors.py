"""Exception types shared across the package."""


class FofregError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FofregError):
    """Invalid parameter combination or object construction."""


class DomainError(FofregError):
    """Evaluation point lies outside the basis domain."""


class RankError(FofregError):
    """A linear system is singular or too ill-conditioned to solve."""


class NumericError(FofregError):
    """A numeric quantity required by a formula is unavailable (singular
    covariance, non-positive determinant, zero denominator)."""


class ConvergenceError(FofregError):
    """Iterative fit failed to converge; carries the last iterate."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class SelectionError(FofregError):
    """No candidate in a selection grid produced a usable fit."""


class InstabilityError(FofregError):
    """Too many bootstrap replicates failed to refit."""


class IngestionError(FofregError):
    """Malformed input file."""


class UsageError(FofregError):
    """Bad command-line invocation."""
