import numpy as np
import pytest

from affagg.core import Prior, SimplexWeights
from affagg.estimators import AffineEstimator, EstimatorFamily, constant_estimator


def random_psd(rng, n, scale=1.0):
    """Symmetric PSD with spectrum in [0, scale]."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return scale * (Q * rng.uniform(0, 1, n)) @ Q.T


def random_family(rng, M, n, sigma=1.0, prior=None):
    members = []
    for _ in range(M):
        A = random_psd(rng, n)
        A = 0.5 * (A + A.T)
        members.append(AffineEstimator(A, rng.standard_normal(n), sigma))
    if prior is None:
        prior = Prior(SimplexWeights.normalized(rng.uniform(0.2, 1.0, M)))
    return EstimatorFamily(tuple(members), prior)


def fixed_family(vectors, sigma=1.0, prior=None):
    members = tuple(constant_estimator(v, sigma) for v in vectors)
    return EstimatorFamily(members, prior or Prior.uniform(len(members)))


def simplex_grid(M, step):
    """All points of the simplex in R^M with coordinates on a grid of ``step``."""
    K = int(round(1 / step))
    if M == 1:
        return np.ones((1, 1))
    out = []
    if M == 2:
        i = np.arange(K + 1)
        return np.column_stack([i, K - i]) / K
    if M == 3:
        i, j = np.meshgrid(np.arange(K + 1), np.arange(K + 1), indexing="ij")
        keep = i + j <= K
        i, j = i[keep], j[keep]
        return np.column_stack([i, j, K - i - j]) / K
    for head in range(K + 1):
        rest = simplex_grid(M - 1, step) * (K - head) / K
        out.append(np.column_stack([np.full(len(rest), head / K), rest]))
    return np.vstack(out)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
