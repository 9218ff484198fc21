"""Exception hierarchy.

The CLI maps each family to an exit code: usage errors exit with 1, data
errors with 2 and numerical failures with 3.
"""


class ScanAdaptError(Exception):
    """Base class for all package errors."""


class UsageError(ScanAdaptError, ValueError):
    """Invalid arguments or infeasible configuration."""


class DimensionError(UsageError):
    """Array shapes or index ranges do not agree."""


class DataError(ScanAdaptError):
    """Malformed or inconsistent input data."""


class LookupFailure(DataError, KeyError):
    """A scan id is not present where it was expected."""

    def __str__(self):
        return Exception.__str__(self)


class UndefinedMetricError(DataError):
    """A metric is undefined for the given inputs (e.g. zero reference)."""


class DegenerateFeatureError(DataError):
    """A retrieval feature has zero energy and cannot be normalized."""


class ContainerError(DataError):
    """Base class for container format errors."""


class BadMagicError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class ShapeMismatchError(ContainerError):
    pass


class NumericalError(ScanAdaptError, ArithmeticError):
    """Non-finite values appeared during an iterative computation."""

    def __init__(self, message, iteration=None, line=None):
        super().__init__(message)
        self.iteration = iteration
        self.line = line


class StageError(ScanAdaptError):
    """A pipeline stage failed; wraps the original error with context."""

    def __init__(self, stage, scan_id, cause):
        super().__init__(f"stage {stage!r} failed on scan {scan_id!r}: {cause}")
        self.stage = stage
        self.scan_id = scan_id
        self.cause = cause
