"""Affine estimator families: projections onto design-column spans, diagonal
filters, fixed vectors, and the cardinality-downweighting sparsity prior."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from math import comb, lgamma
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import TOL, DimensionError, Prior, make_rng


MAX_ENUMERATION_P = 30


def _check_psd(A: np.ndarray) -> np.ndarray:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"A must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("A has non-finite entries")
    if A.size and np.max(np.abs(A - A.T)) > TOL.symmetry:
        raise ValueError("A is not symmetric")
    return A


@dataclass(frozen=True, eq=False)
class AffineEstimator:
    """mu_hat = A Y + b with A symmetric PSD; penalty C = 4 sigma^2 Tr(A)."""

    A: np.ndarray
    b: np.ndarray
    sigma: float = 1.0
    trace_A: float = field(init=False)
    opnorm_A: float = field(init=False)
    penalty_C: float = field(init=False)

    def __post_init__(self):
        A = _check_psd(np.array(self.A, dtype=float))
        b = np.array(self.b, dtype=float)
        if b.shape != (A.shape[0],):
            raise DimensionError(f"b has shape {b.shape}, expected ({A.shape[0]},)")
        if not np.all(np.isfinite(b)):
            raise ValueError("b has non-finite entries")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        eig = np.linalg.eigvalsh(A) if A.size else np.zeros(1)
        if eig[0] < TOL.psd_floor:
            raise ValueError(f"A is not PSD (smallest eigenvalue {eig[0]:.3e})")
        A.setflags(write=False)
        b.setflags(write=False)
        trace = float(np.trace(A))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "trace_A", trace)
        object.__setattr__(self, "opnorm_A", float(max(eig[-1], 0.0)))
        object.__setattr__(self, "penalty_C", 4.0 * self.sigma**2 * trace)

    @property
    def n(self) -> int:
        return self.b.size


def apply(est: AffineEstimator, Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (est.n,):
        raise DimensionError(f"Y has shape {Y.shape}, estimator expects ({est.n},)")
    return est.A @ Y + est.b


def projection_matrix(design_columns, tol: float = TOL.rank) -> tuple[np.ndarray, int]:
    """Orthogonal projector onto the column span and its numerical rank.

    Singular values below ``tol * s_max`` count as zero.
    """
    X = np.asarray(design_columns, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not np.all(np.isfinite(X)):
        raise ValueError("design has non-finite entries")
    n = X.shape[0]
    if X.shape[1] == 0:
        return np.zeros((n, n)), 0
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((n, n)), 0
    r = int(np.sum(s > tol * s[0]))
    Ur = U[:, :r]
    P = Ur @ Ur.T
    return 0.5 * (P + P.T), r


def projection_estimator(design_columns, sigma: float) -> AffineEstimator:
    """Least squares on the given columns: A = X (X'X)^+ X', b = 0."""
    P, r = projection_matrix(design_columns)
    est = AffineEstimator(P, np.zeros(P.shape[0]), sigma)
    if abs(est.trace_A - r) > TOL.trace_integer:
        raise ArithmeticError(f"projector trace {est.trace_A} differs from rank {r}")
    return est


def diagonal_filter(a, sigma: float = 1.0) -> AffineEstimator:
    a = np.asarray(a, dtype=float)
    if a.ndim != 1:
        raise DimensionError("filter coefficients must be a vector")
    if np.any(~np.isfinite(a)) or np.any(a < 0) or np.any(a > 1):
        raise ValueError("diagonal filter entries must lie in [0, 1]")
    return AffineEstimator(np.diag(a), np.zeros(a.size), sigma)


def constant_estimator(b, sigma: float = 1.0) -> AffineEstimator:
    """The data-independent estimator mu_hat = b (A = 0, so C = 0)."""
    b = np.asarray(b, dtype=float)
    return AffineEstimator(np.zeros((b.size, b.size)), b, sigma)


@dataclass(frozen=True)
class SparsityPattern:
    indices: tuple[int, ...]
    rank: int | None = None

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise ValueError(f"repeated index in pattern {idx}")
        if self.rank is not None and self.rank > len(idx):
            raise ValueError("rank exceeds pattern size")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return len(self.indices)


def enumerate_patterns(p: int, max_cardinality: int | None = None) -> list[SparsityPattern]:
    """All subsets of {0..p-1} with at most ``max_cardinality`` elements.

    Ordered by cardinality, then lexicographically (0-based indices).
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    if p > MAX_ENUMERATION_P:
        raise ValueError(f"refusing to enumerate patterns for p={p} > {MAX_ENUMERATION_P}")
    k_max = p if max_cardinality is None else int(max_cardinality)
    if not 0 <= k_max <= p:
        raise ValueError(f"max_cardinality must lie in [0, {p}]")
    return [
        SparsityPattern(J)
        for k in range(k_max + 1)
        for J in itertools.combinations(range(p), k)
    ]


def sparsity_prior(patterns: Sequence[SparsityPattern], p: int) -> Prior:
    """pi_J proportional to exp(-|J|) / binom(p, |J|), normalized over ``patterns``."""
    if not patterns:
        raise ValueError("need at least one pattern")
    k = np.array([pat.size for pat in patterns], dtype=float)
    log_binom = np.array([lgamma(p + 1) - lgamma(s + 1) - lgamma(p - s + 1) for s in k])
    return Prior.from_log_weights(-k - log_binom)


@dataclass(frozen=True, eq=False)
class EstimatorFamily:
    """Ordered affine estimators sharing one noise level, plus a prior.

    Projection families built by :func:`projection_family` also record the
    sparsity pattern behind each member and the number of design columns.
    """

    members: tuple[AffineEstimator, ...]
    prior: Prior
    patterns: tuple[SparsityPattern, ...] | None = None
    n_columns: int | None = None
    A_stack: np.ndarray = field(init=False, repr=False)
    b_stack: np.ndarray = field(init=False, repr=False)
    penalties: np.ndarray = field(init=False, repr=False)
    family_V: float = field(init=False)
    sigma: float = field(init=False)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("an estimator family needs at least one member")
        if self.prior.M != len(members):
            raise DimensionError(f"prior has {self.prior.M} atoms for {len(members)} members")
        n = members[0].n
        if any(m.n != n for m in members):
            raise DimensionError("members act on different dimensions")
        sigmas = {m.sigma for m in members}
        if len(sigmas) != 1:
            raise ValueError(f"members disagree on sigma: {sorted(sigmas)}")
        if self.patterns is not None and len(self.patterns) != len(members):
            raise DimensionError("one pattern per member is required")
        A = np.stack([m.A for m in members])
        b = np.stack([m.b for m in members])
        C = np.array([m.penalty_C for m in members])
        for arr in (A, b, C):
            arr.setflags(write=False)
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "A_stack", A)
        object.__setattr__(self, "b_stack", b)
        object.__setattr__(self, "penalties", C)
        object.__setattr__(self, "family_V", max(m.opnorm_A for m in members))
        object.__setattr__(self, "sigma", sigmas.pop())

    @property
    def M(self) -> int:
        return len(self.members)

    @property
    def n(self) -> int:
        return self.members[0].n

    def estimates(self, Y) -> np.ndarray:
        """(M, n) array whose row j is A_j Y + b_j."""
        Y = np.asarray(Y, dtype=float)
        if Y.shape != (self.n,):
            raise DimensionError(f"Y has shape {Y.shape}, family expects ({self.n},)")
        return np.einsum("mij,j->mi", self.A_stack, Y) + self.b_stack

    def permuted(self, order) -> "EstimatorFamily":
        order = list(order)
        pats = None if self.patterns is None else tuple(self.patterns[i] for i in order)
        prior = Prior(self.prior.probs[order])
        return EstimatorFamily(
            tuple(self.members[i] for i in order), prior, pats, self.n_columns
        )


def projection_family(
    X, sigma: float, max_cardinality: int | None = None
) -> EstimatorFamily:
    """Sparsity pattern aggregation dictionary for design ``X`` (n x p)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError("design must be a matrix")
    p = X.shape[1]
    patterns = enumerate_patterns(p, max_cardinality)
    members, pats = [], []
    for pat in patterns:
        est = projection_estimator(X[:, list(pat.indices)], sigma)
        members.append(est)
        pats.append(SparsityPattern(pat.indices, int(round(est.trace_A))))
    return EstimatorFamily(tuple(members), sparsity_prior(pats, p), tuple(pats), p)


def load_design_csv(path) -> np.ndarray:
    """Rows are observations, columns are X_j; a non-numeric first row is a header."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty design file")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        X = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"{path}: ragged or empty design")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{path}: non-finite design entries")
    return X


def gaussian_design(n: int, p: int, seed: int) -> np.ndarray:
    """n x p design with i.i.d. standard normal entries."""
    return make_rng(seed).standard_normal((n, p))


def parse_design(spec: str) -> np.ndarray:
    """``gaussian:p=8,n=50,seed=3`` or a path to a CSV file."""
    if spec.startswith("gaussian:"):
        opts = dict(kv.split("=", 1) for kv in spec[len("gaussian:"):].split(",") if kv)
        unknown = set(opts) - {"n", "p", "seed"}
        if unknown:
            raise ValueError(f"unknown gaussian design keys {sorted(unknown)}; valid: n, p, seed")
        return gaussian_design(int(opts.get("n", 50)), int(opts.get("p", 8)), int(opts.get("seed", 0)))
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(f"design file not found: {path}")
    return load_design_csv(path)


def pattern_count(p: int, max_cardinality: int) -> int:
    return sum(comb(p, k) for k in range(max_cardinality + 1))
