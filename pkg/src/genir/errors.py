"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2, and any
other failure -> 3.
"""


class GenirError(Exception):
    """Base class for package errors."""


class ConfigError(GenirError):
    """Invalid configuration value or combination."""


class DataError(GenirError):
    """Malformed or inconsistent input data."""
