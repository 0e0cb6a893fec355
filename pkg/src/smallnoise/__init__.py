"""Goodness-of-fit tests for diffusion processes with small noise."""

from .coeff import CoefficientFn, ModelSpec, load_model, parse_expr, validate_model
from .gof_core import TestReport, decide
from .refdist import Distribution, QuantileTable, quantile_table
from .simulate import TimeGrid, Trajectory, simulate_sde, solve_limit_ode

__all__ = [
    "CoefficientFn",
    "ModelSpec",
    "load_model",
    "parse_expr",
    "validate_model",
    "TestReport",
    "decide",
    "Distribution",
    "QuantileTable",
    "quantile_table",
    "TimeGrid",
    "Trajectory",
    "simulate_sde",
    "solve_limit_ode",
]
