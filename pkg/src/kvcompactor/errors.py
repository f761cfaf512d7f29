"""Exception types shared across the package."""


class CompactorError(Exception):
    """Base class for all library errors."""


class FormatError(CompactorError):
    """A file does not conform to its declared on-disk format."""


class TruncationError(FormatError):
    """Declared dimensions are inconsistent with the payload size."""


class DataError(CompactorError):
    """A data value violates an invariant (non-finite entries, bad ranges)."""


class ParameterError(CompactorError, ValueError):
    """An argument is outside its documented domain."""


class PlanMismatchError(CompactorError):
    """A retention plan does not fit the bundle it is applied to."""


class DegenerateFitError(CompactorError):
    """Too little variation in the calibration data to fit the curve."""


class ConvergenceError(CompactorError):
    """Curve fitting exhausted its iteration budget.

    Carries the best iterate reached so callers can inspect it.
    """

    def __init__(self, message, model=None):
        super().__init__(message)
        self.model = model
