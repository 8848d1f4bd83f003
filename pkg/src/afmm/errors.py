"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class CalibrationError(RuntimeError):
    """The requested tail probability cannot be reached by any decay rate."""

    def __init__(self, message, achievable=None):
        super().__init__(message)
        self.achievable = achievable


class DataError(ValueError):
    """Input data could not be parsed or is unusable."""


class NumericalError(RuntimeError):
    """A numerical routine failed (non-monotone grid, singular system, ...)."""
