"""Exception types shared across the package."""


class MilrankError(Exception):
    """Base class for all package errors."""


class ShapeError(MilrankError, ValueError):
    """Operand dimensions do not conform."""


class ConfigError(MilrankError, ValueError):
    """Invalid configuration or hyperparameter combination."""


class FormatError(MilrankError, ValueError):
    """Malformed file on disk (feature file, checkpoint, manifest, labels)."""


class DataError(MilrankError, ValueError):
    """Dataset-level problem (empty video, missing split, bad labels)."""


class NumericError(MilrankError, ArithmeticError):
    """Non-finite value encountered where finiteness is required."""
