"""Exception types shared across the package.

The CLI maps these onto process exit codes (config 2, data 3, numerical 4).
"""


class BiofieldsError(Exception):
    """Base class for package errors."""


class ShapeError(BiofieldsError, ValueError):
    """Array shapes incompatible with the requested operation."""


class ConfigError(BiofieldsError, ValueError):
    """Invalid or inconsistent run configuration."""


class DataError(BiofieldsError, ValueError):
    """Malformed or inconsistent on-disk data."""


class NumericalError(BiofieldsError, RuntimeError):
    """Non-finite values encountered where finite ones are required."""
