"""Q-aggregation: minimize

    nu * sum_j theta_j ||Y - mu_j||^2 + (1 - nu) ||Y - mu_theta||^2
        + sum_j theta_j C_j + lambda * KL(theta, pi)

over the simplex, by entropic mirror descent with backtracking.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import SimplexWeights
from .estimators import EstimatorFamily


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class QaggConfig:
    lam: float
    nu: float = 0.5
    max_iters: int = 50_000
    obj_tol: float = 1e-10
    step_rule: str = "backtracking"

    def __post_init__(self):
        if not 0 < self.nu < 1:
            raise ConfigurationError(f"nu must lie in (0, 1), got {self.nu}")
        if not self.lam > 0:
            raise ConfigurationError(f"lambda must be positive, got {self.lam}")
        if self.step_rule not in ("backtracking", "fixed"):
            raise ConfigurationError(f"unknown step rule {self.step_rule!r}")
        if self.max_iters < 1 or not self.obj_tol > 0:
            raise ConfigurationError("max_iters and obj_tol must be positive")


@dataclass(frozen=True)
class QaggSolution:
    theta_hat: SimplexWeights
    objective: float
    iterations: int
    converged: bool
    aggregate: np.ndarray
    history: tuple[float, ...] = ()


@dataclass(frozen=True, eq=False)
class QProblem:
    """Per-observation cache: member estimates, their losses, penalties, log prior."""

    Y: np.ndarray
    estimates: np.ndarray
    losses: np.ndarray
    penalties: np.ndarray
    log_pi: np.ndarray

    @classmethod
    def build(cls, Y, family: EstimatorFamily) -> "QProblem":
        Y = np.asarray(Y, dtype=float)
        if not np.all(np.isfinite(Y)):
            raise ValueError("Y must be finite")
        E = family.estimates(Y)
        losses = np.sum((Y - E) ** 2, axis=1)
        return cls(Y, E, losses, family.penalties, family.prior.log_pi)


def _kl(theta: np.ndarray, log_pi: np.ndarray) -> float:
    pos = theta > 0
    if np.any(np.isneginf(log_pi[pos])):
        return float("inf")
    t = theta[pos]
    return float(np.sum(t * (np.log(t) - log_pi[pos])))


def _objective(theta: np.ndarray, prob: QProblem, cfg: QaggConfig) -> float:
    resid = prob.Y - theta @ prob.estimates
    return float(
        cfg.nu * theta @ prob.losses
        + (1 - cfg.nu) * resid @ resid
        + theta @ prob.penalties
        + cfg.lam * _kl(theta, prob.log_pi)
    )


def q_objective(theta, Y, family: EstimatorFamily, cfg: QaggConfig) -> float:
    """Value of the Q criterion; +inf if theta charges a zero-prior atom."""
    t = theta.theta if isinstance(theta, SimplexWeights) else SimplexWeights(theta).theta
    return _objective(t, QProblem.build(Y, family), cfg)


def q_gradient(theta, prob: QProblem, cfg: QaggConfig) -> np.ndarray:
    """Euclidean gradient of Q at theta (theta read as a point of R^M_+).

    Coordinates with theta_j = 0 and pi_j > 0 take the limit -inf of the
    log term; the mirror-descent solver never visits such points.
    """
    t = np.asarray(theta, dtype=float)
    resid = prob.Y - t @ prob.estimates
    with np.errstate(divide="ignore"):
        log_ratio = np.log(t) - prob.log_pi
    return (
        cfg.nu * prob.losses
        - 2 * (1 - cfg.nu) * (prob.estimates @ resid)
        + prob.penalties
        + cfg.lam * (log_ratio + 1.0)
    )


def solve_q_aggregate(
    Y, family: EstimatorFamily, cfg: QaggConfig, keep_history: bool = False
) -> QaggSolution:
    """Q-aggregate weights by entropic proximal gradient on the prior's support.

    The KL term is handled exactly in the mirror step, so each update is

        log theta+ = (log theta - eta * g + eta * lam * log pi) / (1 + eta * lam) + const,

    with g the gradient of the smooth part. eta is halved until the step
    passes the relative-smoothness test (which implies Q decreases) and is
    doubled again after every accepted step.
    """
    prob = QProblem.build(Y, family)
    support = np.flatnonzero(family.prior.support)
    if support.size == 0:
        raise ConfigurationError("prior has no positive atom")
    M = family.M

    E = prob.estimates[support]
    R = prob.Y - E
    G = R @ R.T
    lin = cfg.nu * prob.losses[support] + prob.penalties[support]
    log_pi = prob.log_pi[support]
    log_pi = log_pi - logsumexp(log_pi)
    nu, lam = cfg.nu, cfg.lam

    # On the simplex ||Y - mu_theta||^2 = theta' G theta.
    def smooth(t):
        return float(lin @ t + (1 - nu) * (t @ G @ t))

    log_t = log_pi.copy()
    t = np.exp(log_t)
    f_s = smooth(t)
    obj = f_s + lam * float(t @ (log_t - log_pi))
    history = [obj]
    scale = 2 * (1 - nu) * max(float(np.max(np.abs(G))), 1e-300)
    eta = 1.0 / scale
    converged = support.size == 1
    it = 0
    while not converged and it < cfg.max_iters:
        it += 1
        grad = lin + 2 * (1 - nu) * (G @ t)
        while True:
            z = (log_t - eta * grad + eta * lam * log_pi) / (1 + eta * lam)
            new_log = z - logsumexp(z)
            new_t = np.exp(new_log)
            new_fs = smooth(new_t)
            bregman = float(new_t @ (new_log - log_t))
            model = f_s + float(grad @ (new_t - t)) + bregman / eta
            new_obj = new_fs + lam * float(new_t @ (new_log - log_pi))
            if cfg.step_rule == "fixed" or (new_fs <= model + 1e-12 * abs(model) and new_obj <= obj):
                break
            eta *= 0.5
            if eta * scale < 1e-30:
                new_obj = np.inf
                break
        if not new_obj <= obj:
            # no descent left at machine precision
            converged = True
            break
        decrease = obj - new_obj
        log_t, t, f_s, obj = new_log, new_t, new_fs, new_obj
        history.append(obj)
        if decrease < cfg.obj_tol:
            converged = True
        if cfg.step_rule == "backtracking":
            eta *= 2.0

    theta = np.zeros(M)
    theta[support] = t
    theta = SimplexWeights(theta / theta.sum())
    return QaggSolution(
        theta_hat=theta,
        objective=_objective(theta.theta, prob, cfg),
        iterations=it,
        converged=converged,
        aggregate=theta.theta @ prob.estimates,
        history=tuple(history) if keep_history else (),
    )
