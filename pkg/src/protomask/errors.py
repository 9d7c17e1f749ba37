"""Exception taxonomy shared across the package.

The CLI maps these onto its exit codes: ConfigError -> 2, FormatError -> 3,
ValidationError -> 4.
"""


class ProtomaskError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ProtomaskError):
    """Invalid configuration or invalid arguments to an operation."""


class FormatError(ProtomaskError):
    """Malformed, truncated, or version/dimension-mismatched file."""


class ValidationError(ProtomaskError):
    """Numeric or domain validation failure (zero norms, mismatched shapes...)."""
