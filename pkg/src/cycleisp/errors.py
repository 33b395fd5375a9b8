"""Exception hierarchy shared across the package.

The CLI maps each subclass to its own exit code (see ``cycleisp.cli``).
"""


class CycleISPError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CycleISPError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class PatternError(CycleISPError, ValueError):
    """Unknown or missing Bayer pattern tag."""


class ConfigError(CycleISPError, ValueError):
    """Invalid or mismatched configuration."""


class ArgumentError(CycleISPError, ValueError):
    """A call received an argument outside its contract."""


class DataError(CycleISPError):
    """Input data is missing, empty or corrupt."""


class ChecksumError(DataError):
    """A checkpoint failed its integrity check."""


class NonFiniteLossError(CycleISPError, FloatingPointError):
    """Training produced a NaN or infinite loss."""
