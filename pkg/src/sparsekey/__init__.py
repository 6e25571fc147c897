"""Chance-constrained sparse secret-key generation toolkit."""

from .core import (
    INF,
    BudgetError,
    CapacityError,
    ConfigError,
    DataBatch,
    DataError,
    Dictionary,
    DimensionError,
    RandomSource,
    SideInfo,
    SparseCode,
    Thresholds,
    Violation,
    distortion,
    validate_config,
)

__version__ = "0.1.0"

__all__ = [
    "INF",
    "BudgetError",
    "CapacityError",
    "ConfigError",
    "DataBatch",
    "DataError",
    "Dictionary",
    "DimensionError",
    "RandomSource",
    "SideInfo",
    "SparseCode",
    "Thresholds",
    "Violation",
    "distortion",
    "validate_config",
]
