"""Command-line experiment runner.

Every subcommand reads a flat ``key = value`` configuration. Values come from,
in increasing priority: built-in defaults, ``--config FILE``, ``--key value``
flags, and trailing ``key=value`` overrides. Exit status is 0 on success, 2
when an acceptance contract is violated and 1 on input errors.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .core import GaussianMeanModel, make_rng, trial_seed
from .estimators import parse_design, projection_family
from .expweights import exp_weights
from .maurey import THETA_CLASSES, RateConstants, RateQuery, aggregation_rate, proof_rate
from .oracle.bounds import BoundSpec, theorem1_threshold, theorem2_threshold
from .oracle.harness import run_trials, summarize, write_summary_json, write_trials_csv
from .oracle.lemmas import check_chi2_tail, check_maurey, check_maurey2, unit_dictionary
from .oracle.univagg import check_univagg
from .qagg import ConfigurationError, QaggConfig, solve_q_aggregate

EXIT_OK, EXIT_INPUT, EXIT_CONTRACT = 0, 1, 2


class InputError(Exception):
    pass


_PROJECTION = {
    "design": "gaussian",
    "p": 8,
    "n": 50,
    "design_seed": 3,
    "k": 2,
    "beta_scale": 1.0,
    "max_cardinality": -1,
}

_COMMON = {"seed": 0, "sigma": 1.0}

DEFAULTS: dict[str, dict] = {
    "estimate": {**_COMMON, **_PROJECTION, "aggregator": "Q", "lambda": "auto", "nu": 0.5},
    "verify-t2": {**_COMMON, **_PROJECTION, "lambda": "auto", "nu": 0.5, "delta": 0.1,
                  "trials": 1000, "form": "highprob"},
    "verify-t1": {**_COMMON, **_PROJECTION, "lambda": "auto", "delta": 0.1, "trials": 1000},
    "verify-sparsity": {**_COMMON, **_PROJECTION, "aggregator": "Q", "corollary": True,
                        "lambda": "auto", "delta": 0.1, "trials": 1000},
    "verify-univagg": {**_COMMON, "M": 6, "n": 30, "dict_seed": 11, "truth": [0.6, -0.4],
                       "offspan": 0.3, "D": 2, "q": 0.5, "R": 1.0, "delta": 0.1,
                       "trials": 500, "rate_form": "proof", "table_constant": 1.0,
                       "family": "patterns", "classes": list(THETA_CLASSES)},
    "maurey-check": {"seed": 0, "lemma": "sparsify", "M": 50, "n": 20, "m": 5, "q": 1.0,
                     "trials": 1000, "max_resamples": 10, "draws": 10000,
                     "qs": [0.3, 0.5, 0.8, 1.0], "nu": 1.0, "delta": 0.1, "constant": 17.0},
    "chi2-check": {"seed": 0, "a": [1.0] * 10, "t": [1.0, 2.0, 4.0], "trials": 100000},
    "rates": {"class": "model-selection", "M": 100, "delta": 0.05, "sigma": 1.0, "n": 1,
              "D": 1, "B": 1.0, "R": 1.0, "q": 1.0, "form": "table"},
}

_GLOBAL_KEYS = ("output_dir", "tag", "jobs")


def _coerce(key: str, raw, default):
    """Convert a raw string to the type of ``default``."""
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], float):
                return [float(s) for s in items]
            return items
    except ValueError:
        raise InputError(f"bad value for {key}: {raw!r}") from None
    return raw


def _norm(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key = value, got {line!r}")
        k, v = line.split("=", 1)
        out[_norm(k)] = v.strip()
    return out


def resolve_config(command: str, layers: list[dict]) -> dict:
    """Merge override layers over the defaults, rejecting unknown keys."""
    defaults = {_norm(k): v for k, v in DEFAULTS[command].items()}
    cfg = dict(defaults)
    for layer in layers:
        for k, v in layer.items():
            k = _norm(k)
            if k in _GLOBAL_KEYS:
                continue
            if k not in defaults:
                valid = ", ".join(sorted(defaults))
                raise InputError(f"unknown key {k!r} for {command}; valid keys: {valid}")
            cfg[k] = _coerce(k, v, defaults[k])
    return cfg


# ----------------------------------------------------------------------------
# experiment setup


@dataclass
class ProjectionSetup:
    family: object
    model: GaussianMeanModel
    beta: np.ndarray


def projection_setup(cfg: dict) -> ProjectionSetup:
    spec = cfg["design"]
    if spec == "gaussian":
        spec = f"gaussian:p={cfg['p']},n={cfg['n']},seed={cfg['design_seed']}"
    try:
        X = parse_design(spec)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None
    n, p = X.shape
    cfg["n"], cfg["p"] = n, p
    k = min(cfg["k"], p)
    beta = np.zeros(p)
    beta[:k] = cfg["beta_scale"]
    maxc = None if cfg["max_cardinality"] < 0 else cfg["max_cardinality"]
    family = projection_family(X, cfg["sigma"], maxc)
    return ProjectionSetup(family, GaussianMeanModel(X @ beta, cfg["sigma"]), beta)


def resolve_lambda(cfg: dict, aggregator: str, family) -> float:
    """``auto`` gives 20 sigma^2 (Q) or 64 sigma^2 (EW) for projection families
    and the theorem threshold at the family's V otherwise."""
    raw = cfg["lambda"]
    if str(raw).strip().lower() != "auto":
        try:
            return float(raw)
        except ValueError:
            raise InputError(f"lambda must be a number or 'auto', got {raw!r}") from None
    s2 = cfg["sigma"] ** 2
    if family.patterns is not None:
        return 20 * s2 if aggregator == "Q" else 64 * s2
    if aggregator == "Q":
        return theorem2_threshold(cfg["sigma"], cfg.get("nu", 0.5), family.family_V)
    return theorem1_threshold(cfg["sigma"], family.family_V)


# ----------------------------------------------------------------------------
# subcommands; each returns (records or None, summary)


def cmd_estimate(cfg, jobs):
    setup = projection_setup(cfg)
    fam, model = setup.family, setup.model
    agg = cfg["aggregator"].upper()
    lam = resolve_lambda(cfg, agg, fam)
    cfg["lambda"] = lam
    seed = trial_seed(cfg["seed"], 0)
    Y = model.sample(make_rng(seed))
    if agg == "Q":
        sol = solve_q_aggregate(Y, fam, QaggConfig(lam=lam, nu=cfg["nu"]))
        theta, est, iters, conv = sol.theta_hat.theta, sol.aggregate, sol.iterations, sol.converged
    elif agg == "EW":
        theta = exp_weights(Y, fam, lam).theta
        est, iters, conv = theta @ fam.estimates(Y), 0, True
    else:
        raise InputError(f"aggregator must be Q or EW, got {cfg['aggregator']!r}")
    top = np.argsort(-theta, kind="stable")[:10]
    summary = {
        "loss": float(np.sum((est - model.mu) ** 2)),
        "best_single_loss": float(np.min(np.sum((fam.estimates(Y) - model.mu) ** 2, axis=1))),
        "converged": conv,
        "iterations": iters,
        "top_weights": [{"pattern": list(fam.patterns[j].indices), "weight": float(theta[j])}
                        for j in top],
        "contract_ok": True,
    }
    return None, summary


def _verify(cfg, jobs, theorem, aggregator):
    setup = projection_setup(cfg)
    lam = resolve_lambda(cfg, aggregator, setup.family)
    cfg["lambda"] = lam
    spec = BoundSpec(theorem, lam, cfg["sigma"], cfg["delta"], cfg.get("nu", 0.5))
    run = run_trials(spec, setup.family, setup.model, cfg["trials"], cfg["seed"], jobs=jobs)
    return run.records, run.summary


def cmd_verify_t2(cfg, jobs):
    form = cfg["form"]
    if form not in ("highprob", "expectation"):
        raise InputError(f"form must be highprob or expectation, got {form!r}")
    return _verify(cfg, jobs, f"T2-{form}", "Q")


def cmd_verify_t1(cfg, jobs):
    return _verify(cfg, jobs, "T1-EW", "EW")


def cmd_verify_sparsity(cfg, jobs):
    agg = cfg["aggregator"].upper()
    if agg not in ("Q", "EW"):
        raise InputError(f"aggregator must be Q or EW, got {cfg['aggregator']!r}")
    theorem = ("corollary-" if cfg["corollary"] else "spa-") + agg
    return _verify(cfg, jobs, theorem, agg)


def univagg_instance(cfg) -> tuple[np.ndarray, GaussianMeanModel]:
    """Unit dictionary; mu = sum truth_j mu_j plus an offspan-norm orthogonal part."""
    rng = make_rng(trial_seed(cfg["dict_seed"], 0))
    M, n = cfg["M"], cfg["n"]
    D = unit_dictionary(M, n, rng)
    coef = np.zeros(M)
    t = np.asarray(cfg["truth"], dtype=float)[:M]
    coef[: t.size] = t
    z = rng.standard_normal(n)
    Q, _ = np.linalg.qr(D.T)
    z -= Q @ (Q.T @ z)
    mu = coef @ D + cfg["offspan"] * z / np.linalg.norm(z)
    return D, GaussianMeanModel(mu, cfg["sigma"])


def cmd_verify_univagg(cfg, jobs):
    D, model = univagg_instance(cfg)
    bad = [c for c in cfg["classes"] if c not in THETA_CLASSES]
    if bad:
        raise InputError(f"unknown classes {bad}; valid: {', '.join(THETA_CLASSES)}")
    cfg["lambda"] = 20 * cfg["sigma"] ** 2
    verdicts, records = check_univagg(
        D, model, tuple(cfg["classes"]), D=cfg["D"], q=cfg["q"], R=cfg["R"],
        delta=cfg["delta"], T=cfg["trials"], master_seed=cfg["seed"],
        rate_form=cfg["rate_form"], table_constant=cfg["table_constant"],
        family_kind=cfg["family"], jobs=jobs,
    )
    summary = summarize(records, cfg["delta"])
    summary["classes"] = {
        v.theta_class: {"oracle": v.oracle, "rate": v.rate, "rhs": v.rhs,
                        "violation_fraction": v.violation_fraction,
                        "binom_upper_99": v.binom_upper_99, "passed": v.passed}
        for v in verdicts
    }
    summary["contract_ok"] = bool(summary["run_ok"] and all(v.passed for v in verdicts))
    return records, summary


def cmd_maurey_check(cfg, jobs):
    if cfg["lemma"] == "sparsify":
        check, records = check_maurey(cfg["M"], cfg["n"], cfg["m"], cfg["q"], cfg["trials"],
                                      cfg["seed"], cfg["max_resamples"], draws=cfg["draws"])
        summary = {
            "success_rate": check.success_rate,
            "max_support": check.max_support,
            "failed_inequality": check.failed_inequality,
            "draw_mean_increment": check.draw_mean,
            "draw_se": check.draw_se,
            "draw_bound": check.draw_bound,
            "contract_ok": check.passed,
        }
    elif cfg["lemma"] == "penalized":
        check, records = check_maurey2(min(cfg["M"], 16), cfg["n"], tuple(cfg["qs"]),
                                       cfg["trials"], cfg["seed"], cfg["nu"], cfg["delta"],
                                       cfg["constant"])
        summary = {"violations": check.violations, "max_lhs_rhs_ratio": check.max_ratio,
                   "contract_ok": check.passed}
    else:
        raise InputError(f"lemma must be sparsify or penalized, got {cfg['lemma']!r}")
    summary["n_trials"] = len(records)
    return records, summary


def cmd_chi2_check(cfg, jobs):
    ts = sorted(cfg["t"])
    if not ts:
        raise InputError("t needs at least one value")
    from .oracle.lemmas import chi2_draws

    draws = chi2_draws(cfg["a"], cfg["trials"], cfg["seed"])
    per_t, records, ok = {}, None, True
    for t in ts:
        check, recs = check_chi2_tail(cfg["a"], t, cfg["trials"], cfg["seed"], draws=draws)
        records = records or recs
        per_t[repr(t)] = {"threshold": check.threshold, "tail_fraction": check.tail_fraction,
                          "tail_bound": check.tail_bound, "tail_se": check.tail_se,
                          "u": check.u, "mgf_empirical": check.mgf_empirical,
                          "mgf_bound": check.mgf_bound, "passed": check.passed}
        ok &= check.passed
    return records, {"n_trials": cfg["trials"], "per_t": per_t, "csv_t": ts[0],
                     "contract_ok": bool(ok)}


def rate_value(cfg) -> float:
    query = RateQuery(cfg["class"], M=cfg["M"], delta=cfg["delta"], sigma=cfg["sigma"],
                      n=cfg["n"], D=cfg["D"], B=cfg["B"], R=cfg["R"], q=cfg["q"])
    if cfg["form"] == "table":
        return aggregation_rate(query)
    if cfg["form"] == "proof":
        return proof_rate(query, RateConstants())
    raise InputError(f"form must be table or proof, got {cfg['form']!r}")


COMMANDS = {
    "estimate": cmd_estimate,
    "verify-t2": cmd_verify_t2,
    "verify-t1": cmd_verify_t1,
    "verify-sparsity": cmd_verify_sparsity,
    "verify-univagg": cmd_verify_univagg,
    "maurey-check": cmd_maurey_check,
    "chi2-check": cmd_chi2_check,
}


# ----------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def _flag_names(key: str) -> list[str]:
    names = [f"--{key}"]
    if "_" in key:
        names.append(f"--{key.replace('_', '-')}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="affagg", description="Aggregation of affine estimators: experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, defaults in DEFAULTS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value configuration file")
        if name != "rates":
            sp.add_argument("--output-dir", default="runs")
            sp.add_argument("--tag", default=None, help="run directory suffix (default: timestamp)")
            sp.add_argument("--jobs", type=int, default=1)
        for key in defaults:
            dest = f"opt_{_norm(key)}"
            sp.add_argument(*_flag_names(key), dest=dest, default=None, metavar="VALUE")
        sp.add_argument("overrides", nargs="*", metavar="key=value")
    return parser


def _run_dir(output_dir, command: str, tag: str | None) -> Path:
    tag = tag or datetime.now().strftime("%Y%m%dT%H%M%S")
    return Path(output_dir) / f"{command}-{tag}"


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        layers = []
        if args.config:
            layers.append(read_config_file(args.config))
        layers.append({k[4:]: v for k, v in vars(args).items()
                       if k.startswith("opt_") and v is not None})
        over = {}
        for item in args.overrides:
            if "=" not in item:
                raise InputError(f"override must look like key=value, got {item!r}")
            k, v = item.split("=", 1)
            over[k] = v
        layers.append(over)
        cfg = resolve_config(args.command, layers)

        if args.command == "rates":
            print(f"{rate_value(cfg):.4f}")
            return EXIT_OK

        jobs = max(1, int(args.jobs))
        records, summary = COMMANDS[args.command](cfg, jobs)
        cfg_echo = dict(cfg, jobs=jobs, output_dir=str(args.output_dir), tag=args.tag)
        summary = dict(summary, command=args.command, config=cfg_echo)
        out = _run_dir(args.output_dir, args.command, args.tag)
        if records is not None:
            write_trials_csv(records, out / "trials.csv")
        write_summary_json(summary, out / "summary.json")
    except (InputError, ConfigurationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    line = f"{args.command}: lambda={cfg.get('lambda', '-')}"
    if "violation_fraction" in summary:
        line += (f" violation_fraction={summary['violation_fraction']:.4g}"
                 f" binom_upper_99={summary['binom_upper_99']:.4g}")
    print(line)
    print(f"wrote {out}")
    if not summary.get("contract_ok", True):
        print("contract violated", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
