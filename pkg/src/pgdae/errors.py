"""Exception types shared across the package."""


class PgdaeError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(PgdaeError, ValueError):
    """Operand shapes are inconsistent with the declared block structure."""


class OutOfRangeError(PgdaeError, ValueError):
    """An index or evaluation point lies outside its admissible range."""


class SingularMatrixError(PgdaeError):
    """A pivot fell below the relative tolerance during factorization."""


class RankDeficientError(PgdaeError):
    """A matrix that must have full row rank does not."""


class NoConvergenceError(PgdaeError):
    """An iterative reduction exceeded its iteration cap."""


class DegreeZeroError(PgdaeError, ValueError):
    """The operation requires polynomial degree at least one."""


class UnsupportedRuleError(PgdaeError, ValueError):
    """No quadrature rule is available for the requested exactness degree."""


class NotSPDError(PgdaeError):
    """A matrix required to be symmetric positive definite is not."""


class NewtonDivergedError(PgdaeError):
    """Newton's method ended with a residual far above its starting level."""

    def __init__(self, message, interval_index=None):
        super().__init__(message)
        self.interval_index = interval_index


class LinearSolveFailedError(PgdaeError):
    """An inner linear solve failed (singular or non-finite system)."""


class EmptyGridError(PgdaeError, ValueError):
    """An evaluation grid with at least one point is required."""


class DegenerateNormalizationError(PgdaeError):
    """All normalizing quantities vanish; a relative error is undefined."""


class RankTooLowError(PgdaeError):
    """The snapshot matrix cannot support the requested basis size."""
