import math

import numpy as np
import pytest

from affagg.core import Prior, SimplexWeights
from affagg.estimators import projection_family
from affagg.oracle.bounds import (
    BoundSpec,
    binomial_upper,
    expectation_bound_theorem2,
    rhs_sparsity,
    rhs_theorem1,
    rhs_theorem2,
    sparsity_constants,
    sparsity_penalty,
    theorem1_factor,
    theorem1_threshold,
    theorem2_terms,
    theorem2_threshold,
)
from affagg.qagg import ConfigurationError

from conftest import fixed_family, random_family


def test_thresholds():
    assert theorem2_threshold(1.0, 0.5, 1.0) == pytest.approx(20.0)
    assert theorem2_threshold(2.0, 0.25, 0.0) == pytest.approx(8 * 4 / 0.25)
    assert theorem1_threshold(1.0, 1.0) == 64.0
    assert theorem1_threshold(1.0, 4.0) == 80.0


def test_single_estimator_rhs(rng):
    fam = fixed_family([rng.standard_normal(3)], prior=Prior.uniform(1))
    mu = rng.standard_normal(3)
    E = fam.estimates(mu)
    want = np.sum((E[0] - mu) ** 2) + 0 + 20 * math.log(1 / 0.1)
    assert rhs_theorem2(E, mu, fam, 20.0, 0.1) == pytest.approx(want)


def test_projection_penalty_in_rhs(rng):
    fam = projection_family(rng.standard_normal((10, 3)), 1.0)
    terms = theorem2_terms(fam.estimates(np.zeros(10)), np.zeros(10), fam, 20.0, 0.1)
    logs = 20 * (-fam.prior.log_pi + math.log(10))
    np.testing.assert_allclose(terms - logs, [4 * p.size for p in fam.patterns], atol=1e-8)


def test_hand_instance_theorem2():
    v = [np.array([1.0, 0.0]), np.array([0.0, 2.0]), np.array([1.0, 1.0])]
    prior = Prior(SimplexWeights([0.5, 0.25, 0.25]))
    fam = fixed_family(v, prior=prior)
    mu = np.array([1.0, 0.5])
    lam, d = 16.0, 0.2
    terms = [0.25 + lam * math.log(1 / (0.5 * d)), 1 + 2.25 + lam * math.log(1 / (0.25 * d)),
             0.25 + lam * math.log(1 / (0.25 * d))]
    assert rhs_theorem2(fam.estimates(mu), mu, fam, lam, d) == pytest.approx(min(terms))


def test_inadmissible_lambda_quotes_threshold(rng):
    fam = projection_family(rng.standard_normal((8, 2)), 1.0)
    with pytest.raises(ConfigurationError, match="20"):
        rhs_theorem2(fam.estimates(np.zeros(8)), np.zeros(8), fam, 19.0, 0.1)
    with pytest.raises(ConfigurationError, match="64"):
        rhs_theorem1(fam.estimates(np.zeros(8)), np.zeros(8), fam, 60.0, 0.1)
    with pytest.raises(ConfigurationError):
        BoundSpec("corollary-Q", 25.0, 1.0, 0.1).check_admissible(1.0)
    with pytest.raises(ConfigurationError):
        BoundSpec("T9", 25.0, 1.0, 0.1)


def test_theorem1_factor():
    assert theorem1_factor(1.0, 64.0) == pytest.approx(5 / 3)
    assert theorem1_factor(1.0, 1e15) == pytest.approx(1.0)


def test_theorem1_hand_instance():
    v = [np.array([0.0, 0.0]), np.array([3.0, 0.0])]
    fam = fixed_family(v)
    mu = np.array([1.0, 0.0])
    lam, d = 64.0, 0.1
    f = 5 / 3
    want = min(f * 1 + 3 * lam * math.log(2 / d), f * 4 + 3 * lam * math.log(2 / d))
    assert rhs_theorem1(fam.estimates(mu), mu, fam, lam, d) == pytest.approx(want)


def test_delta_one_matches_expectation_form(rng):
    fam = random_family(rng, 4, 5)
    mu = rng.standard_normal(5)
    E = fam.estimates(mu + rng.standard_normal(5))
    lam = 100.0
    losses = np.sum((E - mu) ** 2, axis=1)
    assert rhs_theorem2(E, mu, fam, lam, 1.0) == pytest.approx(expectation_bound_theorem2(losses, fam, lam))


def test_rhs_at_least_min_penalty(rng):
    fam = projection_family(rng.standard_normal((12, 3)), 1.0)
    mu = rng.standard_normal(12)
    for d in (0.01, 0.5, 1.0):
        assert rhs_theorem2(fam.estimates(mu), mu, fam, 20.0, d) >= fam.penalties.min()


def test_sparsity_examples(rng):
    assert sparsity_penalty(0, 8, 0.1, 66) == sparsity_penalty(1, 8, 0.1, 66)
    assert sparsity_penalty(2, 8, 0.1, 66) == pytest.approx(66 * 2 * math.log(2 * math.e * 8 / (2 * 0.1)))
    assert sparsity_constants("Q", 1.0, 20.0, corollary=True) == (1.0, 66.0)
    assert sparsity_constants("Q", 1.0, 20.0) == (1.0, 66.0)
    assert sparsity_constants("EW", 1.0, 64.0, corollary=True) == (5 / 3, 396.0)
    f, c = sparsity_constants("EW", 1.0, 64.0)
    assert f == pytest.approx(5 / 3) and c == pytest.approx(396.0)
    ks = np.arange(1, 9)
    pens = [sparsity_penalty(k, 8, 0.1, 1.0) for k in ks]
    assert np.all(np.diff(pens) > 0)


def test_rhs_sparsity_matches_brute_force(rng):
    X = rng.standard_normal((20, 4))
    beta = np.array([1.0, -0.5, 0, 0])
    mu = X @ beta + 0.2 * rng.standard_normal(20)
    fam = projection_family(X, 1.0)
    best = np.inf
    for pat in fam.patterns:
        cols = list(pat.indices)
        fit = X[:, cols] @ np.linalg.lstsq(X[:, cols], mu, rcond=None)[0] if cols else np.zeros(20)
        best = min(best, np.sum((fit - mu) ** 2) + sparsity_penalty(pat.size, 4, 0.1, 66.0))
    assert rhs_sparsity(fam, mu, 0.1, 20.0, "Q", corollary=True) == pytest.approx(best, rel=1e-10)


def test_binomial_upper():
    assert binomial_upper(0, 1000) == pytest.approx(1 - 0.01 ** (1 / 1000), rel=1e-9)
    assert binomial_upper(1000, 1000) == 1.0
    assert 0.1 < binomial_upper(100, 1000) < 0.13
