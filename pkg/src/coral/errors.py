"""Exception hierarchy.  The CLI maps each family to an exit code."""


class CoralError(Exception):
    """Base class for all package errors."""


class UsageError(CoralError):
    """Bad invocation or configuration (exit code 1)."""


class InvalidParameterError(UsageError, ValueError):
    pass


class DataError(CoralError):
    """Unreadable or malformed input data (exit code 2)."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(DataError):
    pass


class InvalidTransformError(DataError, ValueError):
    pass


class NumericalError(CoralError):
    """Numerical degeneracy or not enough data to measure (exit code 3)."""


class DegenerateNeighborhoodError(NumericalError):
    pass


class NumericalDegeneracyError(NumericalError):
    pass


class InsufficientDataError(NumericalError):
    pass


class InvalidFeatureError(NumericalError, ValueError):
    pass


class DegenerateTrainingError(NumericalError):
    pass


class UndefinedRatioError(NumericalError):
    def __init__(self, message: str, q_misaligned: float, q_aligned: float):
        super().__init__(message)
        self.q_misaligned = q_misaligned
        self.q_aligned = q_aligned
