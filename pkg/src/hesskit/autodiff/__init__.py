"""Differentiation engine: reverse mode for gradients, forward-over-reverse for curvature."""

from . import ops
from .api import (
    DENSE_CAP,
    ScalarFunction,
    evaluate,
    exact_hessian,
    gradient,
    hvp,
    hvp_columns,
    resolve_threads,
    trace,
    value_and_gradient,
)
from .dual import Dual
from .errors import CapExceededError, DimensionError, HesskitError, NonFiniteError
from .record import ComputationRecord, Var, stats

__all__ = [
    "DENSE_CAP", "CapExceededError", "ComputationRecord", "DimensionError", "Dual",
    "HesskitError", "NonFiniteError", "ScalarFunction", "Var", "evaluate",
    "exact_hessian", "gradient", "hvp", "hvp_columns", "ops", "resolve_threads",
    "stats", "trace", "value_and_gradient",
]
