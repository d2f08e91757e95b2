"""Deterministic preparation of non-Gaussian mechanical states by phase-switched optomechanical driving."""

__version__ = "0.1.0"

from .errors import (ConfigError, DimensionError, GridError, InstabilityError, IntegrationError,
                     NumericalError, OptoprepError, PerturbativeRegimeError, ProtocolError, TruncationError)

__all__ = [
    "__version__", "OptoprepError", "ConfigError", "DimensionError", "ProtocolError", "NumericalError",
    "TruncationError", "IntegrationError", "InstabilityError", "PerturbativeRegimeError", "GridError",
]
