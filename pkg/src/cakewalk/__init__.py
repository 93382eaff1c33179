"""Cake-cutting protocol toolkit: typed IRs, conversions, exact execution,
and grid-based guarantee oracles."""

from .engine import allocation_values, replay, run
from .ir import stats, structurally_equal
from .valuation import (
    Allocation, Valuation, envy_matrix, frac, random_valuation, uniform,
)

__all__ = [
    "Allocation",
    "Valuation",
    "allocation_values",
    "envy_matrix",
    "frac",
    "random_valuation",
    "replay",
    "run",
    "stats",
    "structurally_equal",
    "uniform",
]
