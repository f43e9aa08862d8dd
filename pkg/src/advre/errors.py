"""Exception hierarchy shared by every stage of the pipeline."""


class AdvreError(Exception):
    """Base class for all package errors."""


class DimensionError(AdvreError, ValueError):
    """Raised when operand shapes do not agree."""


class ConfigError(AdvreError, ValueError):
    """Raised for invalid configuration values."""


class ValidationError(AdvreError, ValueError):
    """Raised when a record or argument violates a data invariant."""


class ParseError(AdvreError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingError(AdvreError, RuntimeError):
    """Raised when optimization diverges or produces non-finite values."""
