"""Exception taxonomy shared across the package.

CLI exit codes: ConfigError -> 2, DataError -> 3, NumericError -> 4.
"""


class AwbError(Exception):
    """Base class for all package errors."""


class ConfigError(AwbError):
    """Invalid configuration value or malformed config file."""


class DataError(AwbError):
    """Missing/unreadable files, malformed manifests, mismatched datasets."""


class NumericError(AwbError):
    """Non-finite values, diverged optimization, numerically invalid state."""


class DimensionError(AwbError, ValueError):
    """Tensor/image shape mismatch."""


class SingularFitError(NumericError):
    """Least-squares design matrix is rank deficient."""


class CheckpointFormatError(DataError):
    """Bad magic, corrupt header or truncated checkpoint payload."""
