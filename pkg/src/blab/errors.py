"""Exception types raised across the package."""


class BlabError(Exception):
    """Base class for all package errors."""


class RankDeficient(BlabError):
    """A singular value needed by the computation is numerically zero."""


class EnumerationTooLarge(BlabError):
    """Exact enumeration would exceed the configured budget."""


class DomainError(BlabError, ValueError):
    """A closed-form expression was evaluated outside its domain."""


class EmptyObservations(BlabError, ValueError):
    pass


class TooFewSamples(BlabError, ValueError):
    pass


class OutOfRange(BlabError, IndexError):
    pass


class DimensionMismatch(BlabError, ValueError):
    pass


class ConfigError(BlabError, ValueError):
    """Bad experiment configuration; message carries the line or field."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
