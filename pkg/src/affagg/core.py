"""Shared numerical substrate: the Gaussian mean model, simplex points, priors,
KL divergence and seeded random streams."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


class DimensionError(ValueError):
    """Raised when array lengths that must agree do not."""


@dataclass(frozen=True)
class Tolerances:
    """Every numerical tolerance used by validation code, in one place."""

    simplex: float = 1e-12
    symmetry: float = 1e-10
    psd_floor: float = -1e-8
    rank: float = 1e-10
    trace_integer: float = 1e-6


TOL = Tolerances()


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class GaussianMeanModel:
    """Y = mu + sigma * Z with Z standard normal in R^n."""

    mu: np.ndarray
    sigma: float

    def __post_init__(self):
        mu = _as_vector(self.mu, "mu")
        if mu.size < 1:
            raise ValueError("mu must have at least one coordinate")
        if not np.all(np.isfinite(mu)):
            raise ValueError("mu must be finite")
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def n(self) -> int:
        return self.mu.size

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return sample_observation(self, rng)


def sample_observation(model: GaussianMeanModel, rng: np.random.Generator) -> np.ndarray:
    """Draw Y = mu + sigma * Z.

    Z comes from ``rng.standard_normal(n)`` (numpy's ziggurat transform on
    PCG64), so a fixed seed and draw order reproduce Y bit for bit.
    """
    z = rng.standard_normal(model.n)
    return model.mu + model.sigma * z


def trial_seed(master_seed: int, index: int) -> int:
    """64-bit seed for trial ``index``, derived from ``master_seed`` only."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class SimplexWeights:
    """A point of the probability simplex in R^M."""

    theta: np.ndarray
    tol: float = field(default=TOL.simplex, repr=False, compare=False)

    def __post_init__(self):
        theta = _as_vector(self.theta, "theta").copy()
        if theta.size < 1:
            raise ValueError("simplex weights need at least one coordinate")
        if not np.all(np.isfinite(theta)):
            raise ValueError("simplex weights must be finite")
        if np.any(theta < -self.tol):
            raise ValueError(f"negative simplex coordinate {theta.min():.3e}")
        theta = np.clip(theta, 0.0, None)
        total = theta.sum()
        if abs(total - 1.0) > max(self.tol, 64 * np.finfo(float).eps * theta.size):
            raise ValueError(f"simplex weights sum to {total!r}, not 1")
        theta = theta / total
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def normalized(cls, w) -> "SimplexWeights":
        """Build from nonnegative weights that need not sum to one."""
        w = _as_vector(w, "weights")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        total = w.sum()
        if not total > 0:
            raise ValueError("weights have zero total mass")
        return cls(w / total)

    @classmethod
    def vertex(cls, j: int, M: int) -> "SimplexWeights":
        e = np.zeros(M)
        e[j] = 1.0
        return cls(e)

    @property
    def M(self) -> int:
        return self.theta.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.theta, dtype=dtype)

    def __len__(self) -> int:
        return self.theta.size


@dataclass(frozen=True)
class Prior:
    """Prior probability vector on [M] with precomputed logs (-inf on null atoms)."""

    pi: SimplexWeights
    log_pi: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.pi, SimplexWeights):
            object.__setattr__(self, "pi", SimplexWeights(self.pi))
        with np.errstate(divide="ignore"):
            log_pi = np.log(self.pi.theta)
        log_pi.setflags(write=False)
        object.__setattr__(self, "log_pi", log_pi)

    @classmethod
    def uniform(cls, M: int) -> "Prior":
        return cls(SimplexWeights(np.full(M, 1.0 / M)))

    @classmethod
    def from_log_weights(cls, log_w) -> "Prior":
        """Normalize unnormalized log-weights in log space."""
        log_w = _as_vector(log_w, "log weights")
        log_p = log_w - log_sum_exp(log_w)
        return cls(SimplexWeights(np.exp(log_p)))

    @property
    def M(self) -> int:
        return self.pi.M

    @property
    def probs(self) -> np.ndarray:
        return self.pi.theta

    @property
    def support(self) -> np.ndarray:
        return self.pi.theta > 0


def kl_divergence(theta, prior) -> float:
    """sum_j theta_j log(theta_j / pi_j), +inf when theta charges a null atom."""
    t = np.asarray(theta, dtype=float)
    p = prior.probs if isinstance(prior, Prior) else np.asarray(prior, dtype=float)
    if t.shape != p.shape:
        raise DimensionError(f"theta has length {t.size}, prior has length {p.size}")
    pos = t > 0
    if np.any(p[pos] <= 0):
        return float("inf")
    tp = t[pos]
    return float(np.sum(tp * (np.log(tp) - np.log(p[pos]))))


def variance_identity_residual(theta, estimates, m) -> float:
    """Absolute defect of the mixture bias-variance identity.

    sum_k theta_k ||m - e_k||^2 = sum_k theta_k ||ebar - e_k||^2 + ||ebar - m||^2
    with ebar = sum_k theta_k e_k. Only meaningful as a numerical self-test.
    """
    t = np.asarray(theta, dtype=float)
    E = np.asarray(estimates, dtype=float)
    m = np.asarray(m, dtype=float)
    if E.ndim != 2 or E.shape[0] != t.size or E.shape[1] != m.size:
        raise DimensionError(
            f"estimates shape {E.shape} inconsistent with theta {t.size} and m {m.size}"
        )
    bar = t @ E
    lhs = t @ np.sum((m - E) ** 2, axis=1)
    rhs = t @ np.sum((bar - E) ** 2, axis=1) + np.sum((bar - m) ** 2)
    return float(abs(lhs - rhs))


def log_sum_exp(values) -> float:
    """log(sum exp(v)), max-shifted; -inf when every entry is -inf."""
    v = _as_vector(values, "values")
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    if np.all(v == -np.inf):
        return float("-inf")
    if v.size == 1:
        return float(v[0])
    return float(logsumexp(v))
