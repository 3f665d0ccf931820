"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
anything else -> 4.
"""


class CtmError(Exception):
    """Base class for package errors."""


class ConfigError(CtmError):
    """Invalid configuration, hyperparameters, or command arguments."""


class DataError(CtmError):
    """Malformed, inconsistent, or degenerate input data."""


class ModelFormatError(CtmError):
    """Model file is corrupt, truncated, or of an unsupported version."""
