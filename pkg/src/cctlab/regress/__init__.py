"""Regression models and evaluation."""

from .base import NotFittedError, Regressor, TrainingError, kinds, load, make
from .linear import LinearRegressor
from .neighbors import GRNNRegressor, KNNRegressor
from .trees import ForestRegressor, TreeRegressor
from .mlp import MLPRegressor, count_params
from .kan import KANRegressor, bspline_basis

__all__ = [
    "NotFittedError", "Regressor", "TrainingError", "kinds", "load", "make",
    "LinearRegressor", "KNNRegressor", "GRNNRegressor", "TreeRegressor", "ForestRegressor",
    "MLPRegressor", "KANRegressor", "count_params", "bspline_basis",
]
