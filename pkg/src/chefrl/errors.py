"""Exception types shared across the package."""


class ChefError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ChefError):
    """Invalid configuration value (bad spec dimension, unknown mode, ...)."""


class ShapeError(ChefError):
    """Array dimension mismatch between caller and contract."""


class SchemaError(ChefError):
    """Record does not match the dataset schema."""


class FormatError(ChefError):
    """Corrupt or truncated on-disk artifact."""


class UsageError(ChefError):
    """API misuse: stale cache, empty source, out-of-range task index."""


class InputError(ChefError):
    """Rejected runtime input, e.g. a non-finite action."""


class NumericError(ChefError):
    """Non-finite value or failed numeric solve; message carries context."""


class ParseError(ChefError):
    """Config text rejected; message names the offending line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
