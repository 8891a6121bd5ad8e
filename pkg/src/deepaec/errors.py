"""Exception types shared across the package."""


class DeepAecError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(DeepAecError, ValueError):
    """An argument violates a documented precondition (bad shape, range, mode)."""


class DataError(DeepAecError):
    """Input data is malformed, inconsistent, or missing."""


class UnsupportedFormatError(DataError):
    """A file exists but is not in the format this package accepts."""


class NumericalError(DeepAecError):
    """A computation produced non-finite values and cannot continue."""
