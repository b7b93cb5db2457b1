"""Acceptance criteria, each at its stated tolerance and time budget.

Every test appends one PASS/FAIL line, printed in pytest's terminal summary.
"""
import math
import time

import numpy as np
import pytest

from affagg.core import GaussianMeanModel, Prior, make_rng
from affagg.estimators import EstimatorFamily, gaussian_design, projection_estimator, projection_family
from affagg.expweights import ew_objective, exp_weights, penalized_losses
from affagg.maurey import tail_l1_bound_check
from affagg.oracle.bounds import BoundSpec, binomial_upper
from affagg.oracle.harness import run_trials, write_trials_csv
from affagg.oracle.lemmas import check_chi2_tail, check_deviation_lemma, check_maurey, check_maurey2, unit_dictionary
from affagg.oracle.univagg import check_univagg
from affagg.qagg import QaggConfig, solve_q_aggregate

from conftest import ACCEPTANCE_LINES, random_family, simplex_grid

MASTER_SEED = 2024
# experiment name -> zero-argument callable returning its TrialRecords
RERUN = {}
FIRST_CSV = {}


def report(number, name, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {name}  ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def csv_bytes(records, tmp_path, name):
    return write_trials_csv(records, tmp_path / f"{name}.csv").read_bytes()


def sparse_setup(sigma=1.0):
    X = gaussian_design(50, 8, seed=3)
    beta = np.zeros(8)
    beta[:2] = 1.0
    return projection_family(X, sigma), GaussianMeanModel(X @ beta, sigma)


def theorem_run(theorem, lam, tmp_path, name):
    fam, model = sparse_setup()
    spec = BoundSpec(theorem, lam, 1.0, 0.1)

    def go():
        return run_trials(spec, fam, model, 1000, MASTER_SEED)

    RERUN[name] = lambda: go().records
    t0 = time.perf_counter()
    run = go()
    elapsed = time.perf_counter() - t0
    FIRST_CSV[name] = csv_bytes(run.records, tmp_path, name)
    return run.summary, elapsed


def grid_q_values(grid, Y, fam, nu, lam):
    E = fam.estimates(Y)
    L = np.sum((Y - E) ** 2, axis=1)
    resid = Y - grid @ E
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(grid > 0, grid * (np.log(grid) - fam.prior.log_pi), 0.0).sum(1)
    return nu * grid @ L + (1 - nu) * np.sum(resid**2, axis=1) + grid @ fam.penalties + lam * ent


def test_1_solver_matches_grid():
    rng = make_rng(MASTER_SEED)
    grid = simplex_grid(3, 1e-3)
    worst, solve_time = 0.0, 0.0
    for _ in range(100):
        fam = random_family(rng, 3, 10)
        Y = 3 * rng.standard_normal(10)
        lam = float(np.exp(rng.uniform(np.log(0.5), np.log(20))))
        cfg = QaggConfig(lam=lam, nu=0.5)
        t0 = time.perf_counter()
        sol = solve_q_aggregate(Y, fam, cfg)
        solve_time += time.perf_counter() - t0
        worst = max(worst, abs(sol.objective - grid_q_values(grid, Y, fam, 0.5, lam).min()))
    report(1, "Q solver vs grid on 100 instances", worst <= 2e-3 and solve_time < 10,
           f"max |gap| = {worst:.2e} <= 2e-3, solver time {solve_time:.2f}s < 10s")


def test_2_ew_closed_form_is_variational_minimizer():
    rng = make_rng(MASTER_SEED + 1)
    grids = {M: simplex_grid(M, 1e-2) for M in (1, 2, 3, 4)}
    worst = -np.inf
    t0 = time.perf_counter()
    for i in range(100):
        M = 1 + i % 4
        fam = random_family(rng, M, 6)
        Y = 3 * rng.standard_normal(6)
        lam = float(np.exp(rng.uniform(np.log(0.5), np.log(64))))
        best = ew_objective(exp_weights(Y, fam, lam).theta, Y, fam, lam)
        g = grids[M]
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(g > 0, g * (np.log(g) - fam.prior.log_pi), 0.0).sum(1)
        worst = max(worst, best - np.min(g @ penalized_losses(Y, fam) + lam * ent))
    elapsed = time.perf_counter() - t0
    report(2, "EW closed form <= every grid point", worst <= 1e-9 and elapsed < 10,
           f"max(closed - grid min) = {worst:.2e} <= 1e-9, {elapsed:.2f}s < 10s")


def test_3_theorem2_high_probability(tmp_path):
    s, elapsed = theorem_run("T2-highprob", 20.0, tmp_path, "t2")
    ok = s["violation_fraction"] <= 0.1 and s["binom_upper_99"] <= 0.1 and s["run_ok"] and elapsed < 120
    report(3, "Q-aggregate high-probability bound", ok,
           f"violations {s['violation_fraction']:.4f}, 99% upper {s['binom_upper_99']:.4f}, "
           f"per-j max {s['per_j_max_violation_fraction']:.4f}, {elapsed:.1f}s")


def test_4_theorem1_exponential_weights(tmp_path):
    s, elapsed = theorem_run("T1-EW", 64.0, tmp_path, "t1")
    ok = s["violation_fraction"] <= 0.1 and s["binom_upper_99"] <= 0.1 and elapsed < 120
    report(4, "EW high-probability bound", ok,
           f"violations {s['violation_fraction']:.4f}, 99% upper {s['binom_upper_99']:.4f}, {elapsed:.1f}s")


def test_5_sparsity_corollaries(tmp_path):
    sq, tq = theorem_run("corollary-Q", 20.0, tmp_path, "corQ")
    se, te = theorem_run("corollary-EW", 64.0, tmp_path, "corEW")
    ok = all(s["violation_fraction"] <= 0.1 and s["binom_upper_99"] <= 0.1 for s in (sq, se)) and tq + te < 240
    report(5, "sparsity corollaries (66, 5/3 and 396)", ok,
           f"Q {sq['violation_fraction']:.4f} (rhs {sq['rhs']:.1f}), EW {se['violation_fraction']:.4f} "
           f"(rhs {se['rhs']:.1f}), {tq + te:.1f}s")


def five_projection_family():
    X = gaussian_design(20, 5, seed=5)
    members = tuple(projection_estimator(X[:, :k], 1.0) for k in range(5))
    fam = EstimatorFamily(members, Prior.uniform(5))
    return fam, GaussianMeanModel(X[:, :3] @ np.array([1.0, -0.5, 0.25]), 1.0)


def test_6_deviation_lemma(tmp_path):
    fam, model = five_projection_family()
    lam = 20 * fam.family_V * fam.sigma**2
    t0 = time.perf_counter()
    checks = {}
    for delta in (0.05, 0.2):
        def go(delta=delta):
            return check_deviation_lemma(fam, model, "EW", lam, delta, 2000, MASTER_SEED)
        checks[delta], recs = go()
        RERUN[f"dev{delta}"] = lambda go=go: go()[1]
        FIRST_CSV[f"dev{delta}"] = csv_bytes(recs, tmp_path, f"dev{delta}")
    elapsed = time.perf_counter() - t0
    ok = all(c.passed for cs in checks.values() for c in cs) and elapsed < 60
    worst = max((c.tail_fraction - c.delta) / c.tail_se for cs in checks.values() for c in cs)
    means = max(c.mean / c.mean_se for cs in checks.values() for c in cs)
    report(6, "deviation statistic tail and mean (all j)", ok,
           f"max tail excess {worst:.2f} se, max mean {means:.2f} se, {elapsed:.1f}s")


def test_7_chi2_tail(tmp_path):
    t0 = time.perf_counter()
    results = []
    for t in (1.0, 2.0, 4.0):
        check, recs = check_chi2_tail(np.ones(10), t, 100_000, MASTER_SEED)
        results.append(check)
        name = f"chi2_{t:g}"
        RERUN[name] = lambda t=t: check_chi2_tail(np.ones(10), t, 100_000, MASTER_SEED)[1]
        FIRST_CSV[name] = csv_bytes(recs, tmp_path, name)
    elapsed = time.perf_counter() - t0
    ok = all(c.tail_ok and c.mgf_ok for c in results) and elapsed < 30
    detail = ", ".join(f"t={c.t:g}: {c.tail_fraction:.4f} vs {c.tail_bound:.4f}" for c in results)
    mgf = results[0]
    report(7, "chi-square tail and MGF", ok,
           f"{detail}; MGF {mgf.mgf_empirical:.4f} vs {mgf.mgf_bound:.4f}; {elapsed:.1f}s")


def test_8_decay_lemma():
    rng = make_rng(MASTER_SEED)
    t0 = time.perf_counter()
    violations = 0
    for _ in range(10_000):
        M = int(rng.integers(1, 40))
        theta = rng.standard_normal(M) * rng.exponential(1, M) ** 3
        q = float(rng.uniform(0.05, 1.0))
        m = int(rng.integers(1, M + 1))
        tail, bound = tail_l1_bound_check(theta, q, m)
        violations += tail > bound * (1 + 1e-12)
    elapsed = time.perf_counter() - t0
    report(8, "tail l1 decay bound", violations == 0 and elapsed < 5,
           f"{violations} violations in 10^4 sweeps, {elapsed:.2f}s")


def test_9_maurey_sparsifier(tmp_path):
    t0 = time.perf_counter()
    check, recs = check_maurey(M=50, n=20, m=5, q=1.0, T=1000, master_seed=MASTER_SEED, draws=10_000)
    elapsed = time.perf_counter() - t0
    RERUN["maurey"] = lambda: check_maurey(M=50, n=20, m=5, q=1.0, T=1000, master_seed=MASTER_SEED,
                                           draws=10_000)[1]
    FIRST_CSV["maurey"] = csv_bytes(recs, tmp_path, "maurey")
    report(9, "Maurey sparsifier", check.passed and elapsed < 30,
           f"success {check.success_rate:.3f} >= 0.99, max support {check.max_support} <= 10, "
           f"mean increment {check.draw_mean:.4f} <= {check.draw_bound:.4f} + 3se, {elapsed:.1f}s")


def test_10_lq_penalized_inequality(tmp_path):
    t0 = time.perf_counter()
    check, recs = check_maurey2(M=8, n=20, qs=(0.3, 0.5, 0.8, 1.0), T=1000, master_seed=MASTER_SEED)
    elapsed = time.perf_counter() - t0
    RERUN["maurey2"] = lambda: check_maurey2(M=8, n=20, T=1000, master_seed=MASTER_SEED)[1]
    FIRST_CSV["maurey2"] = csv_bytes(recs, tmp_path, "maurey2")
    report(10, "sparse penalized fit vs l_q remainder (constant 17)", check.passed and elapsed < 60,
           f"{check.violations} violations, max lhs/rhs {check.max_ratio:.3f}, {elapsed:.1f}s")


def univagg_experiment():
    rng = make_rng(MASTER_SEED)
    D = unit_dictionary(6, 30, rng)
    z = rng.standard_normal(30)
    Q, _ = np.linalg.qr(D.T)
    z -= Q @ (Q.T @ z)
    mu = 0.6 * D[0] - 0.4 * D[1] + 0.3 * z / np.linalg.norm(z)
    return check_univagg(D, GaussianMeanModel(mu, 1.0), D=2, q=0.5, R=1.0, delta=0.1, T=500,
                         master_seed=MASTER_SEED)


def test_11_universal_aggregation(tmp_path):
    t0 = time.perf_counter()
    verdicts, recs = univagg_experiment()
    elapsed = time.perf_counter() - t0
    RERUN["univagg"] = lambda: univagg_experiment()[1]
    FIRST_CSV["univagg"] = csv_bytes(recs, tmp_path, "univagg")
    ok = len(verdicts) == 7 and all(v.passed for v in verdicts) and elapsed < 120
    worst = max(v.violation_fraction for v in verdicts)
    report(11, "one Q-aggregate against all seven classes", ok,
           f"max class violation fraction {worst:.4f} <= 0.1, {elapsed:.1f}s")


def test_12_determinism(tmp_path):
    if not FIRST_CSV:
        pytest.skip("run together with the experiments above")
    mismatched = [name for name, first in FIRST_CSV.items()
                  if csv_bytes(RERUN[name](), tmp_path, name + "_again") != first]
    report(12, "byte-identical trials.csv on rerun", not mismatched,
           f"{len(FIRST_CSV)} experiments rerun, mismatches: {mismatched or 'none'}")
