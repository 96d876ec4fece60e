"""Exception types shared across the package."""


class CircleError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(CircleError, ValueError):
    pass


class DegenerateInputError(CircleError, ValueError):
    """A zero-norm row or vector where a direction is required."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConvergenceError(CircleError, ArithmeticError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class PreconditionError(CircleError, ValueError):
    pass


class CapacityError(PreconditionError):
    pass


class DatasetFormatError(CircleError, ValueError):
    pass


class CompatibilityError(CircleError, ValueError):
    """Model and dataset disagree on view count or dimensions."""


class GenerationError(CircleError, RuntimeError):
    pass


class TraceError(CircleError, RuntimeError):
    """A forward trace does not belong to the network/parameters being differentiated."""


class ConsistencyError(CircleError, RuntimeError):
    """Internal invariant violated; indicates a bug rather than bad input."""
