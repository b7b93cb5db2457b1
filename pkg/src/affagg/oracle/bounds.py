"""Right-hand sides of the oracle inequalities and their admissibility rules."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import e, inf, log

import numpy as np
from scipy.stats import beta as beta_dist

from ..estimators import EstimatorFamily
from ..qagg import ConfigurationError

THEOREMS = (
    "T2-highprob",
    "T2-expectation",
    "T1-EW",
    "spa-Q",
    "spa-EW",
    "corollary-Q",
    "corollary-EW",
    "univagg",
    "lemma-main",
    "lemma-LM",
)

Q_THEOREMS = {"T2-highprob", "T2-expectation", "spa-Q", "corollary-Q", "univagg"}
EW_THEOREMS = {"T1-EW", "spa-EW", "corollary-EW"}


def theorem2_threshold(sigma: float, nu: float, V: float) -> float:
    """Smallest lambda allowed for the Q-aggregate bounds."""
    inv = inf if V == 0 else 1.0 / (2.5 * V)
    return 8 * sigma**2 / min(nu, 1 - nu, inv)


def theorem1_threshold(sigma: float, V: float) -> float:
    return 4 * sigma**2 * max(16.0, 5.0 * V)


def lemma_main_threshold(sigma: float, V: float) -> float:
    return 20 * V * sigma**2


def _require(lam: float, threshold: float, rule: str) -> None:
    # relative slack so that e.g. lambda = 20 sigma^2 passes for sigma^2 = 0.3
    if lam < threshold * (1 - 1e-12):
        raise ConfigurationError(
            f"lambda = {lam:g} is inadmissible: {rule} requires lambda >= {threshold:g}"
        )


@dataclass(frozen=True)
class BoundSpec:
    theorem: str
    lam: float
    sigma: float
    delta: float
    nu: float = 0.5
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.theorem not in THEOREMS:
            raise ConfigurationError(
                f"unknown theorem {self.theorem!r}; valid: {', '.join(THEOREMS)}"
            )
        if not 0 < self.delta <= 1:
            raise ConfigurationError("delta must lie in (0, 1]")
        if not self.sigma > 0 or not self.lam > 0:
            raise ConfigurationError("sigma and lambda must be positive")

    @property
    def aggregator(self) -> str:
        if self.theorem in Q_THEOREMS:
            return "Q"
        if self.theorem in EW_THEOREMS:
            return "EW"
        return "none"

    def check_admissible(self, V: float) -> None:
        t = self.theorem
        if t in ("T2-highprob", "T2-expectation", "univagg"):
            _require(
                self.lam,
                theorem2_threshold(self.sigma, self.nu, V),
                "8 sigma^2 / min(nu, 1 - nu, (5V/2)^-1)",
            )
        elif t == "T1-EW":
            _require(self.lam, theorem1_threshold(self.sigma, V), "4 sigma^2 (16 v 5V)")
        elif t == "spa-Q":
            _require(self.lam, 20 * self.sigma**2, "20 sigma^2")
        elif t == "spa-EW":
            _require(self.lam, 64 * self.sigma**2, "64 sigma^2")
        elif t in ("corollary-Q", "corollary-EW"):
            want = (20 if t == "corollary-Q" else 64) * self.sigma**2
            if abs(self.lam - want) > 1e-9 * want:
                raise ConfigurationError(f"{t} fixes lambda = {want:g}, got {self.lam:g}")
        elif t == "lemma-main":
            _require(self.lam, lemma_main_threshold(self.sigma, V), "20 V sigma^2")


def _log_inv_prior_delta(family: EstimatorFamily, delta: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return -family.prior.log_pi - log(delta)


def squared_errors(estimates, mu) -> np.ndarray:
    return np.sum((np.asarray(estimates) - np.asarray(mu)) ** 2, axis=1)


def theorem2_terms(estimates, mu, family: EstimatorFamily, lam: float, delta: float) -> np.ndarray:
    """||mu_j - mu||^2 + C_j + lam log(1 / (pi_j delta)) for each j (inf on null atoms)."""
    return squared_errors(estimates, mu) + family.penalties + lam * _log_inv_prior_delta(family, delta)


def rhs_theorem2(estimates, mu, family: EstimatorFamily, lam: float, delta: float,
                 nu: float = 0.5) -> float:
    _require(lam, theorem2_threshold(family.sigma, nu, family.family_V),
             "8 sigma^2 / min(nu, 1 - nu, (5V/2)^-1)")
    return float(np.min(theorem2_terms(estimates, mu, family, lam, delta)))


def expected_squared_errors(family: EstimatorFamily, mu) -> np.ndarray:
    """E||A_j Y + b_j - mu||^2 = ||A_j mu + b_j - mu||^2 + sigma^2 ||A_j||_F^2."""
    mu = np.asarray(mu, dtype=float)
    bias = family.estimates(mu) - mu
    var = family.sigma**2 * np.sum(family.A_stack**2, axis=(1, 2))
    return np.sum(bias**2, axis=1) + var


def expectation_bound_theorem2(losses, family: EstimatorFamily, lam: float) -> float:
    """min_j {losses_j + C_j + lam log(1/pi_j)} for supplied (expected) losses."""
    with np.errstate(divide="ignore"):
        terms = np.asarray(losses) + family.penalties - lam * family.prior.log_pi
    return float(np.min(terms))


def theorem1_factor(sigma: float, lam: float) -> float:
    return 1 + 128 * sigma**2 / (3 * lam)


def theorem1_terms(estimates, mu, family: EstimatorFamily, lam: float, delta: float) -> np.ndarray:
    return (
        theorem1_factor(family.sigma, lam) * squared_errors(estimates, mu)
        + 3 * lam * _log_inv_prior_delta(family, delta)
        + 2 * family.penalties
    )


def rhs_theorem1(estimates, mu, family: EstimatorFamily, lam: float, delta: float) -> float:
    _require(lam, theorem1_threshold(family.sigma, family.family_V), "4 sigma^2 (16 v 5V)")
    return float(np.min(theorem1_terms(estimates, mu, family, lam, delta)))


def sparsity_penalty(k: int, p: int, delta: float, constant: float) -> float:
    """constant * |beta|_0 log(2 e p / (|beta|_0 delta)) with |0|_0 = 1."""
    k = max(int(k), 1)
    return constant * k * log(2 * e * p / (k * delta))


def sparsity_constants(variant: str, sigma: float, lam: float | None,
                       corollary: bool = False) -> tuple[float, float]:
    """(factor on the approximation error, penalty constant)."""
    s2 = sigma**2
    if variant == "Q":
        return (1.0, 66 * s2) if corollary else (1.0, 3 * (lam + 2 * s2))
    if variant == "EW":
        if corollary:
            return 5.0 / 3.0, 396 * s2
        return theorem1_factor(sigma, lam), 6 * (lam + 2 * s2)
    raise ValueError(f"variant must be 'Q' or 'EW', got {variant!r}")


def rhs_sparsity(family: EstimatorFamily, mu, delta: float, lam: float | None = None,
                 variant: str = "Q", corollary: bool = False) -> float:
    """Sparsity oracle bound, minimized over the enumerated patterns.

    For each pattern the least-squares fit ||A_J mu - mu||^2 is the best
    approximation error of any beta supported on J, and the penalty grows
    with |J|, so the pattern minimum equals the minimum over beta.
    """
    if family.patterns is None or family.n_columns is None:
        raise ValueError("rhs_sparsity needs a projection family with recorded patterns")
    factor, const = sparsity_constants(variant, family.sigma, lam, corollary)
    mu = np.asarray(mu, dtype=float)
    approx = squared_errors(family.estimates(mu), mu)  # b_J = 0, so this is A_J mu
    p = family.n_columns
    pens = np.array([sparsity_penalty(pat.size, p, delta, const) for pat in family.patterns])
    return float(np.min(factor * approx + pens))


def binomial_upper(k: int, n: int, level: float = 0.99) -> float:
    """One-sided exact (Clopper-Pearson) upper confidence bound on a proportion."""
    if n <= 0:
        return 1.0
    if k >= n:
        return 1.0
    return float(beta_dist.ppf(level, k + 1, n - k))
