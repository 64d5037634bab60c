"""Exception types shared across the package.

``ConfigError`` maps to CLI exit code 2, ``DataError`` to exit code 3.
Programming-contract violations (bad argument values) raise ``ValueError``.
"""


class CropcastError(Exception):
    """Base class for package-specific errors."""


class ConfigError(CropcastError):
    """Invalid or inconsistent run configuration."""


class DataError(CropcastError):
    """Missing, malformed, or stale data artifacts."""
