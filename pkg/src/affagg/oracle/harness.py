"""Seeded Monte Carlo harness measuring how often the oracle inequalities fail."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import GaussianMeanModel, make_rng, sample_observation, trial_seed
from ..estimators import EstimatorFamily
from ..expweights import exp_weights
from ..qagg import QaggConfig, solve_q_aggregate
from .bounds import (
    BoundSpec,
    binomial_upper,
    expectation_bound_theorem2,
    expected_squared_errors,
    rhs_sparsity,
    theorem1_terms,
    theorem2_terms,
)

CSV_COLUMNS = ("trial", "seed", "lhs", "rhs", "violated", "converged", "iterations")
MAX_NONCONVERGED = 0.01


@dataclass
class TrialRecord:
    trial: int
    seed: int
    lhs: float
    rhs: float
    converged: bool = True
    iterations: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def violated(self) -> bool:
        return self.lhs > self.rhs


@dataclass
class TrialRun:
    records: list[TrialRecord]
    summary: dict


@dataclass(frozen=True, eq=False)
class _Experiment:
    spec: BoundSpec
    family: EstimatorFamily
    model: GaussianMeanModel
    master_seed: int
    qcfg: QaggConfig | None
    fixed_rhs: float | None


def _prepare(spec: BoundSpec, family: EstimatorFamily, model: GaussianMeanModel,
             master_seed: int, qcfg: QaggConfig | None) -> _Experiment:
    spec.check_admissible(family.family_V)
    if family.n != model.n:
        raise ValueError(f"family acts on R^{family.n}, model lives in R^{model.n}")
    if abs(family.sigma - model.sigma) > 1e-12 * model.sigma:
        raise ValueError("family penalties were built for a different sigma")
    if spec.aggregator == "none":
        raise ValueError(f"{spec.theorem} is not a per-trial aggregation experiment")
    if spec.aggregator == "Q" and qcfg is None:
        qcfg = QaggConfig(lam=spec.lam, nu=spec.nu)
    fixed = None
    t = spec.theorem
    if t == "T2-expectation":
        fixed = expectation_bound_theorem2(expected_squared_errors(family, model.mu), family, spec.lam)
    elif t in ("spa-Q", "corollary-Q", "spa-EW", "corollary-EW"):
        fixed = rhs_sparsity(
            family, model.mu, spec.delta, spec.lam,
            variant=spec.aggregator, corollary=t.startswith("corollary"),
        )
    return _Experiment(spec, family, model, int(master_seed), qcfg, fixed)


def _one_trial(exp: _Experiment, index: int) -> TrialRecord:
    seed = trial_seed(exp.master_seed, index)
    Y = sample_observation(exp.model, make_rng(seed))
    fam, spec, mu = exp.family, exp.spec, exp.model.mu
    if spec.aggregator == "Q":
        sol = solve_q_aggregate(Y, fam, exp.qcfg)
        agg, converged, iters = sol.aggregate, sol.converged, sol.iterations
    else:
        theta = exp_weights(Y, fam, spec.lam)
        agg, converged, iters = theta.theta @ fam.estimates(Y), True, 0
    lhs = float(np.sum((agg - mu) ** 2))
    extras = {}
    if exp.fixed_rhs is not None:
        rhs = exp.fixed_rhs
    else:
        E = fam.estimates(Y)
        if spec.theorem == "T2-highprob":
            terms = theorem2_terms(E, mu, fam, spec.lam, spec.delta)
            extras["j_violated"] = lhs > terms
        else:
            terms = theorem1_terms(E, mu, fam, spec.lam, spec.delta)
        rhs = float(np.min(terms))
        extras["argmin_j"] = int(np.argmin(terms))
    return TrialRecord(index, seed, lhs, rhs, converged, iters, extras)


def map_trials(fn, context, T: int, jobs: int = 1) -> list:
    """Apply ``fn(context, i)`` for i < T, optionally in worker processes.

    Results come back in trial order whatever the number of workers.
    """
    if jobs <= 1:
        return [fn(context, i) for i in range(T)]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_generic,
                             initargs=(fn, context)) as pool:
        out = list(pool.map(_generic_worker, range(T), chunksize=max(1, T // (4 * jobs))))
    return out


_GENERIC: tuple | None = None


def _init_generic(fn, context) -> None:
    global _GENERIC
    _GENERIC = (fn, context)


def _generic_worker(index: int):
    fn, context = _GENERIC
    return fn(context, index)


def summarize(records: list[TrialRecord], delta: float, **extra) -> dict:
    ok = [r for r in records if r.converged]
    n_bad = len(records) - len(ok)
    k = sum(r.violated for r in ok)
    n = len(ok)
    frac = k / n if n else float("nan")
    lhs = np.array([r.lhs for r in ok])
    rhs = np.array([r.rhs for r in ok])
    run_ok = n_bad <= MAX_NONCONVERGED * len(records)
    summary = {
        "n_trials": len(records),
        "n_converged": n,
        "n_nonconverged": n_bad,
        "violations": int(k),
        "violation_fraction": frac,
        "binom_upper_99": binomial_upper(k, n),
        "mean_lhs": float(lhs.mean()) if n else float("nan"),
        "mean_rhs": float(rhs.mean()) if n else float("nan"),
        "mean_slack": float((rhs - lhs).mean()) if n else float("nan"),
        "delta": delta,
        "run_ok": bool(run_ok),
        "contract_ok": bool(run_ok and n > 0 and frac <= delta),
    }
    summary.update(extra)
    return summary


def run_trials(spec: BoundSpec, family: EstimatorFamily, model: GaussianMeanModel,
               T: int, master_seed: int, jobs: int = 1,
               qcfg: QaggConfig | None = None) -> TrialRun:
    """Draw T observations, aggregate, and compare the loss with the bound.

    Non-converged solves are reported and kept out of the violation count;
    more than 1% of them marks the run as failed.
    """
    if T < 1:
        raise ValueError("need at least one trial")
    exp = _prepare(spec, family, model, master_seed, qcfg)
    records = map_trials(_one_trial, exp, T, jobs)
    extra = {"theorem": spec.theorem, "lambda": spec.lam, "nu": spec.nu,
             "sigma": spec.sigma, "M": family.M, "V": family.family_V}
    if exp.fixed_rhs is not None:
        extra["rhs"] = exp.fixed_rhs
    if spec.theorem == "T2-highprob":
        ok = [r for r in records if r.converged]
        per_j = np.mean([r.extras["j_violated"] for r in ok], axis=0) if ok else np.zeros(1)
        extra["per_j_max_violation_fraction"] = float(per_j.max())
        extra["per_j_argmax"] = int(per_j.argmax())
    summary = summarize(records, spec.delta, **extra)
    if spec.theorem == "T2-expectation":
        lhs = np.array([r.lhs for r in records if r.converged])
        se = float(lhs.std(ddof=1) / np.sqrt(lhs.size)) if lhs.size > 1 else 0.0
        summary["mean_lhs_se"] = se
        summary["contract_ok"] = bool(summary["run_ok"] and summary["mean_lhs"] <= exp.fixed_rhs + 3 * se)
    return TrialRun(records, summary)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(int(x))


def write_trials_csv(records: list[TrialRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in sorted(records, key=lambda r: r.trial):
            w.writerow([_fmt(v) for v in (r.trial, r.seed, r.lhs, r.rhs, r.violated,
                                          r.converged, r.iterations)])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_summary_json(summary: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return path
