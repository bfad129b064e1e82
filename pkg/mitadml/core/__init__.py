"""Core functionality: data loading, estimators, simulation and reporting."""

from mitadml.core.batch import BatchResult, TaskBatch
from mitadml.core.exceptions import (
    BatchError,
    ConfigError,
    EstimationError,
    InputError,
    MitaDMLError,
    exit_status_for,
)
from mitadml.core.seeds import derive_seed, rng_for

__all__ = [
    "BatchError",
    "BatchResult",
    "ConfigError",
    "EstimationError",
    "InputError",
    "MitaDMLError",
    "TaskBatch",
    "derive_seed",
    "exit_status_for",
    "rng_for",
]
