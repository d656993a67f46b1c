"""Error types raised across the package."""


class VehicleMAEError(Exception):
    """Base class for all package errors."""


class ValidationError(VehicleMAEError, ValueError):
    pass


class NonDivisibleDimensions(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class ShapeMismatch(ValidationError):
    pass


class PlanMismatch(ValidationError):
    pass


class EmptyMaskSet(ValidationError):
    pass


class EmptyBatch(ValidationError):
    pass


class ZeroVector(ValidationError):
    pass


class NonFinite(VehicleMAEError, FloatingPointError):
    """A loss component became NaN or infinite."""

    def __init__(self, message, components=None, checkpoint=None):
        super().__init__(message)
        self.components = components or {}
        self.checkpoint = checkpoint


class FileUnreadable(VehicleMAEError, OSError):
    pass


class EmptyCorpus(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingImage(VehicleMAEError, FileNotFoundError):
    pass


class TeacherUnavailable(VehicleMAEError, RuntimeError):
    pass
