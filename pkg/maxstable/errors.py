"""Exception hierarchy shared by every maxstable module."""
from typing import Optional


class MaxStableError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(MaxStableError, ValueError):
    """A run config or settings file failed validation."""


class DataError(MaxStableError, ValueError):
    """Input data has the wrong shape or content for the requested operation."""


class DimensionCapError(MaxStableError, ValueError):
    """A configured dimension cap would be exceeded."""


class InvalidParameterError(MaxStableError, ValueError):
    """A model or numerical parameter lies outside its valid range."""


class ModelMismatchError(MaxStableError, ValueError):
    """A mu strategy was requested for a model kind it cannot evaluate."""


class NumericalError(MaxStableError, ArithmeticError):
    """A numerical routine failed (factorization, quadrature, optimizer)."""

    def __init__(self, message: str, last_estimate: Optional[float] = None,
                 residual: Optional[float] = None):
        super().__init__(message)
        self.last_estimate = last_estimate
        self.residual = residual
