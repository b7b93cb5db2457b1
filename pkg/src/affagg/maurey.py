"""l_q machinery: tail decay of sorted coefficients, Maurey's empirical
sparsifier, the rate function phi_{q,M}, and the universal aggregation rates."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import e, log, sqrt

import numpy as np

THETA_CLASSES = (
    "model-selection",
    "convex",
    "linear",
    "D-linear",
    "D-convex",
    "lq",
    "D-lq",
)


def logbar(x: float) -> float:
    """max(log x, 1); non-positive arguments hit the floor."""
    if not x > 0:
        return 1.0
    return max(log(x), 1.0)


def l0_norm(theta) -> int:
    """Number of nonzeros, with the convention |0|_0 = 1."""
    return max(int(np.count_nonzero(theta)), 1)


def lq_norm(theta, q: float) -> float:
    if not q > 0:
        raise ValueError("lq_norm needs q > 0; use l0_norm for the count")
    a = np.abs(np.asarray(theta, dtype=float))
    if q == 1:
        return float(a.sum())
    return float(np.sum(a**q) ** (1.0 / q))


def lq_power(theta, q: float) -> float:
    """|theta|_q^q, with |theta|_0^0 = |theta|_0."""
    if q == 0:
        return float(l0_norm(theta))
    return float(np.sum(np.abs(np.asarray(theta, dtype=float)) ** q))


def tail_l1_bound_check(theta, q: float, m: int) -> tuple[float, float]:
    """(sum of all but the m largest |theta_j|, |theta|_q * m^(1 - 1/q))."""
    a = np.sort(np.abs(np.asarray(theta, dtype=float)))[::-1]
    if not 1 <= m <= a.size:
        raise ValueError(f"m must lie in [1, {a.size}]")
    return float(a[m:].sum()), lq_norm(a, q) * m ** (1.0 - 1.0 / q)


@dataclass(frozen=True)
class MaureyResult:
    theta_m: np.ndarray
    success: bool
    attempts: int
    increment: float
    allowed: float

    @property
    def gap(self) -> float:
        """Best achieved increment minus the allowed one (<= 0 on success)."""
        return self.increment - self.allowed


def _check_dictionary(dictionary, B: float | None) -> tuple[np.ndarray, float]:
    D = np.asarray(dictionary, dtype=float)
    if D.ndim != 2:
        raise ValueError("dictionary must be an (M, n) array")
    norms = np.sqrt(np.sum(D**2, axis=1))
    if B is None:
        B = float(norms.max())
    elif np.any(norms > B * (1 + 1e-12)):
        raise ValueError(f"dictionary norm {norms.max():.6g} exceeds B = {B}")
    return D, float(B)


def maurey_draw(theta, q: float, m: int, rng: np.random.Generator) -> np.ndarray:
    """One realization of alpha + (1/m) sum_i U_i as a coefficient vector.

    alpha keeps the m largest |theta_j|; U picks index i with probability
    |beta_i| / r and places r * sign(beta_i) there (else nothing), with
    r = |theta|_q m^(1 - 1/q).
    """
    theta = np.asarray(theta, dtype=float)
    M = theta.size
    order = np.argsort(-np.abs(theta), kind="stable")
    alpha = np.zeros(M)
    alpha[order[:m]] = theta[order[:m]]
    beta = theta - alpha
    l1 = np.abs(beta).sum()
    if l1 == 0:
        return alpha
    r = lq_norm(theta, q) * m ** (1.0 - 1.0 / q)
    if l1 > r * (1 + 1e-12):
        raise ArithmeticError(f"tail l1 mass {l1!r} exceeds decay bound {r!r}")
    r = max(r, l1)
    probs = np.append(np.abs(beta) / r, max(1.0 - l1 / r, 0.0))
    probs /= probs.sum()
    picks = rng.choice(M + 1, size=m, p=probs)
    counts = np.bincount(picks, minlength=M + 1)[:M]
    return alpha + (r / m) * np.sign(beta) * counts


def maurey_sparsify(
    theta,
    dictionary,
    mu,
    q: float,
    m: int,
    rng: np.random.Generator,
    max_resamples: int = 10,
    B: float | None = None,
) -> MaureyResult:
    """Find theta^m with at most 2m nonzeros and

        ||mu_{theta^m} - mu||^2 <= ||mu_theta - mu||^2 + B^2 |theta|_q^2 m^(1 - 2/q)

    by resampling Maurey's random approximation. Returns the first success, or
    the best attempt with ``success=False``.
    """
    theta = np.asarray(theta, dtype=float)
    D, B = _check_dictionary(dictionary, B)
    mu = np.asarray(mu, dtype=float)
    M = theta.size
    if D.shape[0] != M:
        raise ValueError("dictionary and theta disagree on M")
    if not 1 <= 2 * m <= M:
        raise ValueError(f"need 1 <= m <= M/2, got m={m}, M={M}")
    allowed = B**2 * lq_norm(theta, q) ** 2 * m ** (1.0 - 2.0 / q)
    base = float(np.sum((theta @ D - mu) ** 2))
    if np.count_nonzero(theta) <= 2 * m:
        return MaureyResult(theta.copy(), True, 0, 0.0, allowed)
    best = None
    for attempt in range(1, max_resamples + 1):
        cand = maurey_draw(theta, q, m, rng)
        if np.count_nonzero(cand) > 2 * m:
            raise AssertionError("sparsifier produced more than 2m nonzeros")
        inc = float(np.sum((cand @ D - mu) ** 2)) - base
        if best is None or inc < best[1]:
            best = (cand, inc)
        if inc <= allowed:
            return MaureyResult(cand, True, attempt, inc, allowed)
    return MaureyResult(best[0], False, max_resamples, best[1], allowed)


@dataclass(frozen=True)
class LqParams:
    q: float
    nu: float
    B: float
    delta: float
    M: int
    R: float = 1.0

    def __post_init__(self):
        if not 0 <= self.q <= 1:
            raise ValueError("q must lie in [0, 1]")
        if not (self.R > 0 and self.B > 0 and self.nu > 0):
            raise ValueError("R, B and nu must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.M < 1:
            raise ValueError("M must be at least 1")


def phi(lq_q: float, params: LqParams, constant: float = 9.0) -> float:
    """phi_{q,M}(theta; nu, B) given |theta|_q^q.

    c nu^(2-q) |theta|_q^q B^q [logbar(e M nu^q / (B^q |theta|_q^q delta))]^(1 - q/2)
    maxed with 3 nu^2 logbar(e M / delta).
    """
    q, nu, B, delta, M = params.q, params.nu, params.B, params.delta, params.M
    floor = 3 * nu**2 * logbar(e * M / delta)
    if lq_q <= 0:
        return floor
    inner = e * M * nu**q / (B**q * lq_q * delta)
    main = constant * nu ** (2 - q) * lq_q * B**q * logbar(inner) ** (1 - q / 2)
    return max(main, floor)


def sparse_penalty(k: int, M: int, nu: float, delta: float) -> float:
    """nu^2 k log(2 e M / (k delta)) with k read through |0|_0 = 1."""
    k = max(int(k), 1)
    return nu**2 * k * log(2 * e * M / (k * delta))


def maurey2_lhs(dictionary, mu, nu: float, delta: float) -> float:
    """min over theta in R^M of ||mu_theta - mu||^2 + nu^2 |theta|_0 log(2eM/(|theta|_0 delta)).

    Exact by enumeration of supports (least squares on each), so only for small M.
    """
    D = np.asarray(dictionary, dtype=float)
    mu = np.asarray(mu, dtype=float)
    M = D.shape[0]
    if M > 16:
        raise ValueError("support enumeration limited to M <= 16")
    best = float(mu @ mu) + sparse_penalty(1, M, nu, delta)
    for k in range(1, M + 1):
        pen = sparse_penalty(k, M, nu, delta)
        if pen >= best:
            break
        for S in itertools.combinations(range(M), k):
            Xs = D[list(S)].T
            coef, *_ = np.linalg.lstsq(Xs, mu, rcond=None)
            res = mu - Xs @ coef
            best = min(best, float(res @ res) + pen)
    return best


def maurey2_rhs(theta, dictionary, mu, params: LqParams, constant: float = 17.0) -> float:
    theta = np.asarray(theta, dtype=float)
    fit = theta @ np.asarray(dictionary, dtype=float) - np.asarray(mu, dtype=float)
    return float(fit @ fit) + phi(lq_power(theta, params.q), params, constant)


@dataclass(frozen=True)
class RateQuery:
    theta_class: str
    M: int
    delta: float
    sigma: float = 1.0
    n: int = 1
    D: int = 1
    B: float = 1.0
    R: float = 1.0
    q: float = 1.0

    def __post_init__(self):
        if self.theta_class not in THETA_CLASSES:
            raise ValueError(
                f"unknown theta class {self.theta_class!r}; valid: {', '.join(THETA_CLASSES)}"
            )
        if self.M < 1 or not 1 <= self.D <= self.M:
            raise ValueError("need M >= 1 and D in [1, M]")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not (self.sigma > 0 and self.B > 0 and self.R > 0):
            raise ValueError("sigma, B and R must be positive")
        if not 0 < self.q <= 1:
            raise ValueError("q must lie in (0, 1]")


def aggregation_rate(query: RateQuery) -> float:
    """Optimal-rate expression for the class, numerical constants dropped.

    An order-of-magnitude rate, not a certified bound.
    """
    c = query.theta_class
    s2, M, d = query.sigma**2, query.M, query.delta
    s, B, R, q, D = query.sigma, query.B, query.R, query.q, query.D
    linear = s2 * M * log(1 / d)
    d_linear = s2 * D * log(M / (d * D))
    convex = max(s * B * sqrt(logbar(s * M / (d * B))), s2 * logbar(M / d))
    lq = max(
        s ** (2 - q) * R**q * B**q * logbar((M / d) * (s / (B * R)) ** q) ** (1 - q / 2),
        s2 * logbar(M / d),
    )
    return {
        "model-selection": s2 * log(M / d),
        "convex": min(convex, linear),
        "linear": linear,
        "D-linear": d_linear,
        "D-convex": min(convex, d_linear),
        "lq": min(lq, linear),
        "D-lq": min(lq, d_linear),
    }[c]


@dataclass(frozen=True)
class RateConstants:
    """Literal constants of the per-class bounds used to prove universality."""

    sparse: float = 66.0
    floor: float = 198.0
    maurey: float = 17.0
    nu_factor: float = 9.0

    @property
    def convex(self) -> float:
        return self.maurey * self.nu_factor


def proof_rate(query: RateQuery, k: RateConstants = RateConstants()) -> float:
    """Explicit remainder for each class with every constant written out."""
    c = query.theta_class
    s, s2, M, d = query.sigma, query.sigma**2, query.M, query.delta
    B, R, q, D = query.B, query.R, query.q, query.D
    nu = k.nu_factor * s
    floor = k.floor * s2 * logbar(e * M / d)
    linear = k.sparse * s2 * M * log(2 * e / d)
    d_linear = k.sparse * s2 * D * log(2 * e * M / (D * d))

    def lq_term(q_, R_):
        main = k.maurey * nu ** (2 - q_) * R_**q_ * B**q_ * logbar(
            (e * M / d) * (nu / (B * R_)) ** q_
        ) ** (1 - q_ / 2)
        return max(main, floor)

    return {
        "model-selection": k.sparse * s2 * log(2 * e * M / d),
        "convex": min(lq_term(1.0, 1.0), linear),
        "linear": linear,
        "D-linear": d_linear,
        "D-convex": min(lq_term(1.0, 1.0), d_linear),
        "lq": min(lq_term(q, R), linear),
        "D-lq": min(lq_term(q, R), d_linear),
    }[c]
