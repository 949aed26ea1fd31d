"""Exception types shared across the package."""


class CoopSteerError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CoopSteerError, ValueError):
    """Shapes, sizes or settings that cannot work together."""


class UsageError(CoopSteerError, RuntimeError):
    """An API called in a state where it cannot act (e.g. backward on a non-scalar)."""


class EmptyBatchError(UsageError):
    pass


class EmptySequenceError(UsageError):
    pass


class NumericError(CoopSteerError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class FormatError(CoopSteerError, ValueError):
    """Malformed input file (e.g. a CSV missing a column)."""


class IngestionError(CoopSteerError, IOError):
    """Referenced image files that are missing or undecodable."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)


class TrainingDivergedError(NumericError):
    """Loss became non-finite; carries the last parameters known to be good."""

    def __init__(self, message, last_good_params=None, diagnostics=None):
        super().__init__(message)
        self.last_good_params = last_good_params
        self.diagnostics = diagnostics or {}
