"""Exception types raised across the package."""


class SpatFdaError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(SpatFdaError):
    pass


class ConvergenceFailure(SpatFdaError):
    pass


class DomainError(SpatFdaError, ValueError):
    pass


class GridMismatch(SpatFdaError, ValueError):
    pass


class InvalidK(SpatFdaError, ValueError):
    pass


class LengthMismatch(SpatFdaError, ValueError):
    pass


class LocationMismatch(SpatFdaError, ValueError):
    pass


class FileFormat(SpatFdaError, ValueError):
    pass


class TooFewPairs(SpatFdaError, ValueError):
    pass


class AllFitsFailed(SpatFdaError):
    pass


class NonPsd(SpatFdaError):
    pass


class NonPositiveScale(SpatFdaError, ValueError):
    pass
