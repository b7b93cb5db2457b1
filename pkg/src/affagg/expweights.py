"""Exponential-weights aggregate of affine estimators."""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .core import SimplexWeights, kl_divergence
from .estimators import EstimatorFamily


def penalized_losses(Y, family: EstimatorFamily) -> np.ndarray:
    """||Y - mu_hat_j||^2 + C_j for every member."""
    Y = np.asarray(Y, dtype=float)
    E = family.estimates(Y)
    return np.sum((Y - E) ** 2, axis=1) + family.penalties


def gibbs_weights(scores, log_pi, lam: float) -> np.ndarray:
    """theta_j proportional to pi_j exp(-scores_j / lam), normalized in log space."""
    scores = np.asarray(scores, dtype=float)
    if np.any(np.isnan(scores)):
        raise ValueError("NaN penalized loss")
    if not lam > 0:
        raise ValueError(f"temperature must be positive, got {lam}")
    support = ~np.isneginf(log_pi)
    logw = np.full(scores.size, -np.inf)
    logw[support] = log_pi[support] - scores[support] / lam
    theta = np.zeros(scores.size)
    theta[support] = np.exp(logw[support] - logsumexp(logw[support]))
    return theta


def exp_weights(Y, family: EstimatorFamily, lam: float) -> SimplexWeights:
    theta = gibbs_weights(penalized_losses(Y, family), family.prior.log_pi, lam)
    return SimplexWeights(theta / theta.sum())


def ew_aggregate(Y, family: EstimatorFamily, lam: float) -> np.ndarray:
    theta = exp_weights(Y, family, lam)
    return theta.theta @ family.estimates(Y)


def ew_objective(theta, Y, family: EstimatorFamily, lam: float) -> float:
    """The linear-plus-entropy criterion whose minimizer is the EW vector."""
    t = np.asarray(theta, dtype=float)
    return float(t @ penalized_losses(Y, family) + lam * kl_divergence(t, family.prior))
