"""Exception hierarchy shared across the package.

ValidationError maps to CLI exit code 1, NumericalError to exit code 2.
"""


class CnsError(Exception):
    """Base class for all package errors."""


class ValidationError(CnsError):
    """Bad inputs: malformed configs, bundles, or violated invariants."""


class ConfigError(ValidationError):
    """Unknown config key, bad value type, or inconsistent settings."""


class BundleFormatError(ValidationError):
    """On-disk bundle does not match the documented byte layout."""


class PlacementError(ValidationError):
    """Scene objects could not be placed within the attempt budget."""


class NumericalError(CnsError):
    """Non-finite loss or gradient; aborts the current run."""
