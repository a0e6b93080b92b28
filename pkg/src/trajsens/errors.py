"""Shared exception types."""


class TrajsensError(Exception):
    """Base class for all package errors."""


class NotFoundError(TrajsensError):
    """Requested benchmark system is not registered."""


class DimensionError(TrajsensError):
    """Vector or matrix dimensions do not match or chain."""


class ParseError(TrajsensError):
    """Malformed controller, model, or dataset file."""


class ConfigError(TrajsensError):
    """Invalid configuration value or violated precondition."""


class UnsupportedError(TrajsensError):
    """Operation not defined for this system kind."""


class TrainingError(TrajsensError):
    """Training produced a non-finite loss."""


class RangeError(TrajsensError):
    """Requested step window lies outside the available horizon."""


class DivergenceError(TrajsensError):
    """Simulation left the finite range; carries the finite prefix."""

    def __init__(self, message: str, prefix=None):
        super().__init__(message)
        self.prefix = prefix


class DomainWarning(UserWarning):
    """An iterate or target left the system's operating domain."""
