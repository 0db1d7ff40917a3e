"""Exception hierarchy shared across the package."""


class MTSError(Exception):
    """Base class for all package errors."""


class ConfigError(MTSError, ValueError):
    """Invalid configuration value (field is named in the message)."""


class ShapeError(MTSError, ValueError):
    """Array shape does not match what an operation expects."""


class ParseError(MTSError, ValueError):
    """Malformed dataset file; message carries line/field diagnostics."""

    def __init__(self, message, path=None, line=None, field=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.line = line
        self.field = field


class DatasetError(MTSError, ValueError):
    """Dataset violates an invariant (non-finite values, flat channel)."""


class UsageError(MTSError, RuntimeError):
    """An operation was called out of order or with unusable arguments."""


class NumericError(MTSError, ArithmeticError):
    """Non-finite or otherwise invalid numeric value."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class IntegrityError(MTSError, IOError):
    """Checkpoint manifest and binary blobs disagree."""


class UnsupportedVersionError(IntegrityError):
    """Checkpoint written by an incompatible format version."""
