"""Exception types raised by loggas."""


class LoggasError(Exception):
    """Base class for library errors."""


class DomainError(LoggasError, ValueError):
    """A point lies outside the rectangle a weight or measure lives on."""


class SingularConfigurationError(LoggasError, ValueError):
    """Two points of a configuration coincide where that is not allowed."""


class UnsupportedWeightError(LoggasError, TypeError):
    """The weight kind does not support the requested operation."""


class InfeasibleNeighborhoodError(LoggasError):
    """No configuration of d points has moments inside the neighborhood."""

    def __init__(self, message, worst_index=None, worst_gap=None):
        super().__init__(message)
        self.worst_index = worst_index
        self.worst_gap = worst_gap


class DensityConditionError(LoggasError, ValueError):
    """A base measure gives some small disc less than r**T mass."""


class ChainInitializationError(LoggasError):
    """A constrained chain never entered its constraint set."""
