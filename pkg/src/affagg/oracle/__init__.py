"""Bound calculators and Monte Carlo checks for the oracle inequalities."""
from .bounds import (
    BoundSpec,
    binomial_upper,
    expectation_bound_theorem2,
    expected_squared_errors,
    rhs_sparsity,
    rhs_theorem1,
    rhs_theorem2,
    theorem1_threshold,
    theorem2_threshold,
)
from .harness import TrialRecord, TrialRun, run_trials, write_summary_json, write_trials_csv
from .lemmas import check_chi2_tail, check_deviation_lemma
from .univagg import check_univagg, oracle_term

__all__ = [
    "BoundSpec",
    "TrialRecord",
    "TrialRun",
    "binomial_upper",
    "check_chi2_tail",
    "check_deviation_lemma",
    "check_univagg",
    "expectation_bound_theorem2",
    "expected_squared_errors",
    "oracle_term",
    "rhs_sparsity",
    "rhs_theorem1",
    "rhs_theorem2",
    "run_trials",
    "theorem1_threshold",
    "theorem2_threshold",
    "write_summary_json",
    "write_trials_csv",
]
