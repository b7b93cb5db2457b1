"""Aggregation of affine estimators in the Gaussian mean model."""
from .core import GaussianMeanModel, Prior, SimplexWeights, kl_divergence, log_sum_exp
from .estimators import (
    AffineEstimator,
    EstimatorFamily,
    diagonal_filter,
    enumerate_patterns,
    projection_estimator,
    projection_family,
    sparsity_prior,
)
from .expweights import ew_aggregate, exp_weights
from .qagg import QaggConfig, QaggSolution, solve_q_aggregate

__version__ = "0.1.0"

__all__ = [
    "AffineEstimator",
    "EstimatorFamily",
    "GaussianMeanModel",
    "Prior",
    "QaggConfig",
    "QaggSolution",
    "SimplexWeights",
    "diagonal_filter",
    "enumerate_patterns",
    "ew_aggregate",
    "exp_weights",
    "kl_divergence",
    "log_sum_exp",
    "projection_estimator",
    "projection_family",
    "solve_q_aggregate",
    "sparsity_prior",
]
