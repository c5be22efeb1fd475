"""Exception types raised across the package."""


class VolsynthError(Exception):
    """Base class for all package errors."""


class DegenerateDepth(VolsynthError, ValueError):
    pass


class InvalidRange(VolsynthError, ValueError):
    pass


class DimensionMismatch(VolsynthError, ValueError):
    pass


class TooSmall(VolsynthError, ValueError):
    pass


class EmptyViewSet(VolsynthError, ValueError):
    pass


class NonFiniteGradient(VolsynthError, ArithmeticError):
    pass


class InvalidPose(VolsynthError, ValueError):
    pass


class ParseError(VolsynthError, ValueError):
    """Manifest syntax or field error; carries the offending line number."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class MissingImage(VolsynthError, FileNotFoundError):
    pass


class UnsupportedFormat(VolsynthError, ValueError):
    pass


class CorruptHeader(VolsynthError, ValueError):
    pass
