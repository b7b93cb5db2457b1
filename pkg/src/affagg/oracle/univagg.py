"""One Q-aggregate, seven constraint classes: the universal aggregation check."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import inf

import numpy as np

from ..core import GaussianMeanModel, Prior, make_rng, sample_observation, trial_seed
from ..estimators import EstimatorFamily, constant_estimator, projection_family
from ..maurey import THETA_CLASSES, RateConstants, RateQuery, aggregation_rate, proof_rate
from ..qagg import QaggConfig, solve_q_aggregate
from .bounds import binomial_upper
from .harness import TrialRecord, map_trials

# (max support size, l1 radius) describing each class; "D" and "R" are filled in later.
_CLASS_SHAPE = {
    "model-selection": (1, 1.0),
    "convex": ("M", 1.0),
    "linear": ("M", inf),
    "D-linear": ("D", inf),
    "D-convex": ("D", 1.0),
    "lq": ("M", "R"),
    "D-lq": ("D", "R"),
}


def _ls_on_face(X: np.ndarray, mu: np.ndarray, signs: np.ndarray | None, radius: float):
    """Least squares on columns X, optionally on the face signs' theta = radius."""
    if signs is None:
        coef, *_ = np.linalg.lstsq(X, mu, rcond=None)
        return coef
    k = X.shape[1]
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = 2 * X.T @ X
    K[:k, k] = signs
    K[k, :k] = signs
    rhs = np.append(2 * X.T @ mu, radius)
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    return sol[:k]


def constrained_ls_min(dictionary, mu, max_support: int, l1_radius: float) -> float:
    """min ||mu_theta - mu||^2 over |theta|_0 <= max_support, |theta|_1 <= l1_radius.

    Exact for small M by enumerating supports and, for finite radius, the
    faces of the l1 ball: every candidate is feasible, and the minimizer
    solves the equality-constrained problem on its own support and signs.
    """
    D = np.asarray(dictionary, dtype=float)
    mu = np.asarray(mu, dtype=float)
    M = D.shape[0]
    if M > 12:
        raise ValueError("face enumeration limited to M <= 12")
    best = float(mu @ mu)
    tol = 1e-12 * max(1.0, l1_radius if np.isfinite(l1_radius) else 1.0)
    for k in range(1, min(max_support, M) + 1):
        for S in itertools.combinations(range(M), k):
            X = D[list(S)].T
            cands = [_ls_on_face(X, mu, None, l1_radius)]
            if np.isfinite(l1_radius):
                for signs in itertools.product((-1.0, 1.0), repeat=k):
                    cands.append(_ls_on_face(X, mu, np.array(signs), l1_radius))
            for c in cands:
                if np.abs(c).sum() <= l1_radius + tol:
                    r = X @ c - mu
                    best = min(best, float(r @ r))
    return best


def oracle_term(theta_class: str, dictionary, mu, D: int = 1, R: float = 1.0) -> float:
    """Best approximation error of mu by mu_theta over the class.

    The l_q classes are relaxed to the l_1 ball of the same radius (B_q(R)
    sits inside B_1(R) for q <= 1), which gives a lower bound, exact at q = 1.
    """
    if theta_class not in _CLASS_SHAPE:
        raise ValueError(f"unknown theta class {theta_class!r}")
    M = np.asarray(dictionary).shape[0]
    size, radius = _CLASS_SHAPE[theta_class]
    size = {"M": M, "D": D}.get(size, size)
    radius = R if radius == "R" else radius
    return constrained_ls_min(dictionary, mu, size, radius)


@dataclass(frozen=True)
class ClassVerdict:
    theta_class: str
    oracle: float
    rate: float
    violations: int
    n_trials: int
    delta: float

    @property
    def rhs(self) -> float:
        return self.oracle + self.rate

    @property
    def violation_fraction(self) -> float:
        return self.violations / self.n_trials

    @property
    def binom_upper_99(self) -> float:
        return binomial_upper(self.violations, self.n_trials)

    @property
    def passed(self) -> bool:
        return self.violation_fraction <= self.delta


def dictionary_family(dictionary, sigma: float, kind: str = "patterns") -> EstimatorFamily:
    """Projection family over the dictionary (sparsity prior), or the fixed vectors."""
    Dm = np.asarray(dictionary, dtype=float)
    if kind == "patterns":
        return projection_family(Dm.T, sigma)
    if kind == "fixed":
        members = tuple(constant_estimator(v, sigma) for v in Dm)
        return EstimatorFamily(members, Prior.uniform(len(members)))
    raise ValueError(f"family kind must be 'patterns' or 'fixed', got {kind!r}")


@dataclass(frozen=True, eq=False)
class _UnivContext:
    family: EstimatorFamily
    model: GaussianMeanModel
    cfg: QaggConfig
    master_seed: int


def _univ_trial(ctx: _UnivContext, index: int):
    seed = trial_seed(ctx.master_seed, index)
    Y = sample_observation(ctx.model, make_rng(seed))
    sol = solve_q_aggregate(Y, ctx.family, ctx.cfg)
    return seed, float(np.sum((sol.aggregate - ctx.model.mu) ** 2)), sol.converged, sol.iterations


def check_univagg(dictionary, model: GaussianMeanModel, theta_classes=THETA_CLASSES, *,
                  D: int = 2, q: float = 0.5, R: float = 1.0, B: float | None = None,
                  delta: float = 0.1, T: int = 500, master_seed: int = 0,
                  constants: RateConstants = RateConstants(), rate_form: str = "proof",
                  table_constant: float = 1.0, family_kind: str = "patterns",
                  jobs: int = 1) -> tuple[list[ClassVerdict], list[TrialRecord]]:
    """Run the Q-aggregate (lambda = 20 sigma^2) and score it against every class.

    ``rate_form="proof"`` uses the per-class remainders with their literal
    constants; ``"table"`` uses ``table_constant`` times the constant-free rate.
    """
    Dm = np.asarray(dictionary, dtype=float)
    norms = np.sqrt(np.sum(Dm**2, axis=1))
    if B is None:
        B = max(1.0, float(norms.max()))
    if np.any(norms > B * (1 + 1e-12)):
        raise ValueError(f"dictionary vector of norm {norms.max():.6g} exceeds B = {B}")
    M = Dm.shape[0]
    sigma = model.sigma
    family = dictionary_family(Dm, sigma, family_kind)
    cfg = QaggConfig(lam=20 * sigma**2, nu=0.5)
    out = map_trials(_univ_trial, _UnivContext(family, model, cfg, int(master_seed)), T, jobs)
    ok = [o for o in out if o[2]]
    lhs = np.array([o[1] for o in ok])

    verdicts = []
    for c in theta_classes:
        query = RateQuery(c, M=M, delta=delta, sigma=sigma, n=model.n, D=D, B=B, R=R, q=q)
        if rate_form == "proof":
            rate = proof_rate(query, constants)
        elif rate_form == "table":
            rate = table_constant * aggregation_rate(query)
        else:
            raise ValueError(f"rate_form must be 'proof' or 'table', got {rate_form!r}")
        orc = oracle_term(c, Dm, model.mu, D=D, R=R)
        verdicts.append(ClassVerdict(c, orc, rate, int(np.sum(lhs > orc + rate)), len(ok), delta))
    tightest = min(v.rhs for v in verdicts)
    records = [TrialRecord(i, s, l, tightest, conv, it) for i, (s, l, conv, it) in enumerate(out)]
    return verdicts, records
