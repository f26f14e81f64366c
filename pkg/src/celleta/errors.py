"""Exception hierarchy.

Everything raised on purpose derives from :class:`CellEtaError`.  The two
branches map onto CLI exit codes: :class:`ValidationError` (bad arguments,
shapes, configuration) exits 2, :class:`DataError` (unusable input data) exits 3.
"""


class CellEtaError(Exception):
    pass


class ValidationError(CellEtaError, ValueError):
    pass


class DataError(CellEtaError):
    pass


# geometry / grid
class OutOfBounds(ValidationError):
    pass


class DegenerateSegment(ValidationError):
    pass


class NonPositiveDuration(ValidationError):
    pass


class BadConfig(ValidationError):
    pass


# networks
class ShapeMismatch(ValidationError):
    pass


class StaleCache(ValidationError):
    pass


class WidthMismatch(ValidationError):
    pass


class BadK(ValidationError):
    pass


class BadWindow(ValidationError):
    pass


class ModelGridMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class ZeroTruth(ValidationError):
    pass


class EmptyGroupSet(ValidationError):
    pass


class EmptyRoute(ValidationError):
    pass


# data
class EmptyTrajectory(DataError):
    pass


class EmptyProfile(DataError):
    pass


class InsufficientData(DataError):
    pass


class InsufficientGraph(DataError):
    pass


class BadRecord(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(DataError):
    pass


class EmptyFile(DataError):
    pass


class TooFew(DataError):
    pass


class CorruptFile(DataError):
    pass
