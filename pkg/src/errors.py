# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.
"""Exceptions raised by noisegp."""

from typing import Any, List, Optional


class NoiseGPError(Exception):
    """Base exception for noisegp."""

    def __init__(self, message):
        super().__init__(message)
        self.message = message


class InvalidInputError(NoiseGPError):
    """Raised on malformed inputs, e.g. a dimension mismatch."""


class InvalidConfigError(NoiseGPError):
    """Raised on invalid hyperparameters or run configuration."""


class InsufficientSamplesError(NoiseGPError):
    """Raised when an estimator gets too few samples."""


class UnsupportedOperationError(NoiseGPError):
    """Raised when an oracle lacks a capability, e.g. per-sample gradients."""


class StationaryPointError(NoiseGPError):
    """Raised when a quantity is undefined at a stationary point."""


class EstimationFailedError(NoiseGPError):
    """Raised when the difference table has no stable column."""

    def __init__(self, message, table: Optional[List[List[float]]] = None):
        super().__init__(message)
        self.table = table if table is not None else []


class DivergedError(NoiseGPError):
    """Raised when a solver meets a non-finite objective or gradient."""

    def __init__(self, message, trace: Optional[List[Any]] = None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
