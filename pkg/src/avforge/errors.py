"""Exception hierarchy. The CLI maps each family to an exit code."""


class AvforgeError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ParameterError(AvforgeError, ValueError):
    """Bad arguments: dimension mismatches, invalid cameras, unknown names."""

    exit_code = 2


class DataError(AvforgeError):
    """Malformed or truncated files, unsupported versions."""

    exit_code = 2

    def __init__(self, message: str, offset: int | None = None, field: str | None = None):
        self.offset = offset
        self.field = field
        parts = [message]
        if field is not None:
            parts.append(f"field={field}")
        if offset is not None:
            parts.append(f"byte offset {offset}")
        super().__init__(" | ".join(parts))


class NumericError(AvforgeError, ArithmeticError):
    """Non-finite values, degenerate geometry discovered during computation."""

    exit_code = 3


class OptimizationError(NumericError):
    """An optimization could not proceed (e.g. no supervised pixels)."""


class GuidanceTransportError(AvforgeError):
    """Failure talking to an external guidance backend."""

    exit_code = 4


class RegionInvisible(Exception):
    """Raised by region cropping when the requested region is not visible.

    Not an error: callers skip the corresponding loss term.
    """
