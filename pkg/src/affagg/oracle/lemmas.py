"""Monte Carlo checks of the two concentration lemmas behind the theorems."""
from __future__ import annotations

from dataclasses import dataclass
from math import exp, log, sqrt

import numpy as np

from ..core import GaussianMeanModel, make_rng, sample_observation, trial_seed
from ..estimators import EstimatorFamily
from ..expweights import exp_weights
from ..maurey import LqParams, lq_norm, maurey2_lhs, maurey2_rhs, maurey_draw, maurey_sparsify
from ..qagg import QaggConfig, solve_q_aggregate
from .bounds import lemma_main_threshold, _require
from .harness import TrialRecord, map_trials

CHI2_BLOCK = 4096


@dataclass(frozen=True)
class DeviationCheck:
    j: int
    tail_fraction: float
    tail_se: float
    mean: float
    mean_se: float
    delta: float

    @property
    def tail_ok(self) -> bool:
        return self.tail_fraction <= self.delta + 3 * self.tail_se

    @property
    def mean_ok(self) -> bool:
        return self.mean <= 3 * self.mean_se

    @property
    def passed(self) -> bool:
        return self.tail_ok and self.mean_ok


@dataclass(frozen=True, eq=False)
class _DevContext:
    family: EstimatorFamily
    model: GaussianMeanModel
    weight_rule: object
    lam: float
    nu: float
    master_seed: int


def deviation_statistics(theta, Y, mu, family: EstimatorFamily, lam: float) -> np.ndarray:
    """The centred deviation statistic for every reference index j at once.

    2<xi, mu_theta - mu_j> - lam KL(theta, pi) - sum_k theta_k C_k
        - (8 sigma^2 / lam) sum_k theta_k ||mu_k - mu_j||^2
    """
    theta = np.asarray(theta, dtype=float)
    E = family.estimates(Y)
    xi = np.asarray(Y) - np.asarray(mu)
    pos = theta > 0
    kl = float(np.sum(theta[pos] * (np.log(theta[pos]) - family.prior.log_pi[pos])))
    mix = theta @ E
    inner = 2 * (xi @ mix - E @ xi)
    sq = np.sum(E**2, axis=1)
    # sum_k theta_k ||E_k - E_j||^2 = sum_k theta_k ||E_k||^2 - 2 <mix, E_j> + ||E_j||^2
    spread = theta @ sq - 2 * (E @ mix) + sq
    return inner - lam * kl - theta @ family.penalties - 8 * family.sigma**2 / lam * spread


def _weights(ctx: _DevContext, Y) -> np.ndarray:
    rule = ctx.weight_rule
    if isinstance(rule, str):
        if rule == "EW":
            return exp_weights(Y, ctx.family, ctx.lam).theta
        if rule == "Q":
            return solve_q_aggregate(Y, ctx.family, QaggConfig(lam=ctx.lam, nu=ctx.nu)).theta_hat.theta
        raise ValueError(f"weight rule must be 'Q', 'EW' or a fixed vector, got {rule!r}")
    return np.asarray(rule, dtype=float)


def _dev_trial(ctx: _DevContext, index: int):
    seed = trial_seed(ctx.master_seed, index)
    Y = sample_observation(ctx.model, make_rng(seed))
    theta = _weights(ctx, Y)
    return seed, deviation_statistics(theta, Y, ctx.model.mu, ctx.family, ctx.lam)


def check_deviation_lemma(family: EstimatorFamily, model: GaussianMeanModel, weight_rule,
                          lam: float, delta: float, T: int, master_seed: int,
                          j: int | None = None, nu: float = 0.5, jobs: int = 1
                          ) -> tuple[list[DeviationCheck], list[TrialRecord]]:
    """Empirical tail and mean of the deviation statistic.

    ``j=None`` checks every reference index. Records carry the statistic
    for the first checked index as ``lhs`` against ``lam log(1/delta)``.
    """
    _require(lam, lemma_main_threshold(family.sigma, family.family_V), "20 V sigma^2")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    ctx = _DevContext(family, model, weight_rule, lam, nu, int(master_seed))
    out = map_trials(_dev_trial, ctx, T, jobs)
    seeds = [s for s, _ in out]
    stats = np.array([d for _, d in out])
    js = range(family.M) if j is None else [int(j)]
    level = lam * log(1 / delta)
    tail_se = sqrt(delta * (1 - delta) / T)
    checks = []
    for jj in js:
        col = stats[:, jj]
        checks.append(DeviationCheck(
            j=jj,
            tail_fraction=float(np.mean(col > level)),
            tail_se=tail_se,
            mean=float(col.mean()),
            mean_se=float(col.std(ddof=1) / sqrt(T)) if T > 1 else 0.0,
            delta=delta,
        ))
    j0 = checks[0].j
    records = [TrialRecord(i, seeds[i], float(stats[i, j0]), level) for i in range(T)]
    return checks, records


@dataclass(frozen=True)
class Chi2Check:
    t: float
    threshold: float
    tail_fraction: float
    tail_bound: float
    tail_se: float
    u: float | None
    mgf_empirical: float | None
    mgf_bound: float | None
    mgf_rel_se: float | None

    @property
    def tail_ok(self) -> bool:
        return self.tail_fraction <= self.tail_bound + 3 * self.tail_se

    @property
    def mgf_ok(self) -> bool:
        if self.u is None:
            return True
        return self.mgf_empirical <= self.mgf_bound * (1 + 3 * self.mgf_rel_se)

    @property
    def passed(self) -> bool:
        return self.tail_ok and self.mgf_ok


def chi2_draws(a, T: int, master_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """S = sum_i a_i (Z_i^2 - 1) for T trials, plus each trial's stream seed.

    Trials are drawn in blocks of ``CHI2_BLOCK`` that share one stream.
    """
    a = np.asarray(a, dtype=float)
    S = np.empty(T)
    seeds = np.empty(T, dtype=np.uint64)
    for b, start in enumerate(range(0, T, CHI2_BLOCK)):
        stop = min(start + CHI2_BLOCK, T)
        seed = trial_seed(master_seed, b)
        Z = make_rng(seed).standard_normal((stop - start, a.size))
        S[start:stop] = (Z**2 - 1) @ a
        seeds[start:stop] = seed
    return S, seeds


def check_chi2_tail(a, t: float, T: int, master_seed: int, u: float | None = None,
                    draws=None) -> tuple[Chi2Check, list[TrialRecord]]:
    """Tail P(S > 2|a|_2 sqrt(t) + 2|a|_inf t) against e^-t, and the MGF bound at u.

    u defaults to 1/(4 |a|_inf); the MGF check is skipped when a = 0.
    """
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ValueError("weights a must be nonnegative")
    if not t > 0:
        raise ValueError("t must be positive")
    S, seeds = chi2_draws(a, T, master_seed) if draws is None else draws
    a2, ainf = float(np.sqrt(a @ a)), float(a.max(initial=0.0))
    threshold = 2 * a2 * sqrt(t) + 2 * ainf * t
    p0 = exp(-t)
    mgf = bound = rel = None
    if ainf > 0:
        if u is None:
            u = 1 / (4 * ainf)
        if not 0 < 2 * ainf * u < 1:
            raise ValueError(f"u = {u} violates 0 < 2|a|_inf u < 1")
        vals = np.exp(u * S)
        mgf = float(vals.mean())
        rel = float(vals.std(ddof=1) / (mgf * sqrt(T)))
        bound = exp(a2**2 * u**2 / (1 - 2 * ainf * u))
    else:
        u = None
    check = Chi2Check(t, threshold, float(np.mean(S > threshold)), p0,
                      sqrt(p0 * (1 - p0) / T), u, mgf, bound, rel)
    records = [TrialRecord(i, int(seeds[i]), float(S[i]), threshold) for i in range(T)]
    return check, records


def unit_dictionary(M: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """M random unit vectors in R^n, as rows."""
    D = rng.standard_normal((M, n))
    return D / np.sqrt(np.sum(D**2, axis=1, keepdims=True))


def _dense_theta(M: int, q: float, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Random signed theta with |theta|_q = scale."""
    theta = rng.laplace(size=M)
    return scale * theta / lq_norm(theta, q)


@dataclass(frozen=True)
class MaureyCheck:
    n_runs: int
    successes: int
    max_support: int
    m: int
    failed_inequality: int
    draw_mean: float
    draw_se: float
    draw_bound: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.n_runs

    @property
    def passed(self) -> bool:
        return (self.max_support <= 2 * self.m and self.failed_inequality == 0
                and self.success_rate >= 0.99
                and self.draw_mean <= self.draw_bound + 3 * self.draw_se)


def check_maurey(M: int = 50, n: int = 20, m: int = 5, q: float = 1.0, T: int = 1000,
                 master_seed: int = 0, max_resamples: int = 10, noise: float = 0.1,
                 draws: int = 10_000) -> tuple[MaureyCheck, list[TrialRecord]]:
    """Seeded runs of the constructive sparsifier plus raw draws of its increment.

    Each run draws a unit dictionary, a dense theta with |theta|_q = 1 and
    mu = mu_theta + noise * Z. The raw draws reuse the first run's instance
    and compare the mean increment with (r B)^2 / m.
    """
    records, successes, max_sup, bad = [], 0, 0, 0
    first = None
    for i in range(T):
        seed = trial_seed(master_seed, i)
        rng = make_rng(seed)
        D = unit_dictionary(M, n, rng)
        theta = _dense_theta(M, q, 1.0, rng)
        mu = theta @ D + noise * rng.standard_normal(n)
        res = maurey_sparsify(theta, D, mu, q, m, rng, max_resamples=max_resamples, B=1.0)
        sup = int(np.count_nonzero(res.theta_m))
        max_sup = max(max_sup, sup)
        successes += res.success
        bad += res.success and res.increment > res.allowed
        records.append(TrialRecord(i, seed, res.increment, res.allowed, res.success, res.attempts))
        if first is None:
            first = (theta, D, mu)

    theta, D, mu = first
    rng = make_rng(trial_seed(master_seed, T))
    base = float(np.sum((theta @ D - mu) ** 2))
    inc = np.array([float(np.sum((maurey_draw(theta, q, m, rng) @ D - mu) ** 2)) - base
                    for _ in range(draws)])
    r = lq_norm(theta, q) * m ** (1.0 - 1.0 / q)
    check = MaureyCheck(T, successes, max_sup, m, bad, float(inc.mean()),
                        float(inc.std(ddof=1) / sqrt(draws)), r**2 / m)
    return check, records


@dataclass(frozen=True)
class Maurey2Check:
    n_runs: int
    violations: int
    max_ratio: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def check_maurey2(M: int = 8, n: int = 20, qs=(0.3, 0.5, 0.8, 1.0), T: int = 1000,
                  master_seed: int = 0, nu: float = 1.0, delta: float = 0.1,
                  constant: float = 17.0) -> tuple[Maurey2Check, list[TrialRecord]]:
    """Penalized sparse fit against the l_q remainder, for random theta and every q.

    theta has |theta|_q drawn log-uniformly in [1e-2, 1e2] so both branches of
    phi are exercised. Records keep the worst q of each run.
    """
    records, viol, worst = [], 0, 0.0
    for i in range(T):
        seed = trial_seed(master_seed, i)
        rng = make_rng(seed)
        D = unit_dictionary(M, n, rng)
        q0 = float(qs[i % len(qs)])
        theta = _dense_theta(M, q0, 10 ** rng.uniform(-2, 2), rng)
        mu = theta @ D + 0.5 * rng.standard_normal(n)
        lhs = maurey2_lhs(D, mu, nu, delta)
        rhs = min(maurey2_rhs(theta, D, mu, LqParams(q, nu, 1.0, delta, M), constant) for q in qs)
        viol += lhs > rhs
        worst = max(worst, lhs / rhs)
        records.append(TrialRecord(i, seed, lhs, rhs))
    return Maurey2Check(T, int(viol), worst), records
