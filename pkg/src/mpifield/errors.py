"""Exception hierarchy shared across the package."""


class MpiFieldError(Exception):
    """Base class for all package errors."""


class ShapeError(MpiFieldError, ValueError):
    """Tensor/array arguments have incompatible shapes."""


class NumericalError(MpiFieldError, RuntimeError):
    """A computation produced NaN/Inf or an otherwise invalid value."""


class DivergenceError(NumericalError):
    """Training produced non-finite parameters or losses."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DataError(MpiFieldError, ValueError):
    """Input files or datasets violate the expected schema."""


class GeometryError(MpiFieldError, ValueError):
    """Degenerate or invalid camera/plane configuration."""
