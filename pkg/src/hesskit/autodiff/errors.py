class HesskitError(Exception):
    """Base class for library errors."""


class DimensionError(HesskitError, ValueError):
    pass


class NonFiniteError(HesskitError, FloatingPointError):
    def __init__(self, message, primitive=None):
        super().__init__(message)
        self.primitive = primitive


class CapExceededError(HesskitError):
    """A dense Hessian larger than the configured cap was requested."""
