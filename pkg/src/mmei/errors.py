"""Exception hierarchy shared across the package."""


class MmeiError(Exception):
    """Base class for all package errors."""


class ShapeError(MmeiError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(MmeiError, ValueError):
    """A hyperparameter or argument is outside its allowed range."""


class DataError(MmeiError):
    """Base class for dataset and file-format problems."""


class ParseError(DataError):
    """A record could not be decoded."""


class SchemaError(DataError):
    """A record decoded but violates the declared schema (dims, fields)."""


class LabelError(DataError):
    """A label is not a member of the declared label space."""


class StratificationError(DataError):
    """A class required for stratified splitting has no samples."""


class CheckpointError(DataError):
    """A checkpoint file is corrupt, truncated or from another version."""


class NumericalError(MmeiError, ArithmeticError):
    """A loss or parameter became non-finite."""
