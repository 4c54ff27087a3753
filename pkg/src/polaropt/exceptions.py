"""Exception types raised across the package."""


class PolarOptError(Exception):
    """Base class for all package errors."""


class NonConvergenceError(PolarOptError):
    """The SVD solver failed to converge."""


class ZeroMatrixError(PolarOptError, ValueError):
    """Newton-Schulz was asked to normalise an all-zero matrix."""


class ShapeMismatchError(PolarOptError, ValueError):
    pass


class SpecMismatchError(PolarOptError, ValueError):
    """Blocks do not match the isotypic spec they are assembled against."""


class NotOrthogonalError(PolarOptError, ValueError):
    pass


class EpochOutOfRangeError(PolarOptError, IndexError):
    pass


class StaleCacheError(PolarOptError):
    """Model parameters changed between forward and backward."""


class DivergenceDetected(PolarOptError, FloatingPointError):
    """Training loss became non-finite."""
