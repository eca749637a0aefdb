"""Exception hierarchy shared by every dmtlab module."""


class DmtError(Exception):
    """Base class for all dmtlab errors."""


class ConfigError(DmtError, ValueError):
    """Invalid configuration, flags or pre-condition violations detected before compute."""


class ShapeError(DmtError, ValueError):
    """Array dimensions do not line up."""


class NumericError(DmtError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class ParseError(DmtError, ValueError):
    """Malformed input file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyInputError(DmtError, ValueError):
    """An operation that needs at least one unit received none."""
