import numpy as np
import pytest

from hlqr.bench import gen_graph
from hlqr.matkit import spectral_abscissa


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, k, scale=1.0):
    """Random symmetric positive definite matrix."""
    M = rng.standard_normal((k, k))
    return scale * (M @ M.T + k * np.eye(k))


def random_symmetric(rng, k, scale=1.0):
    M = rng.standard_normal((k, k))
    return scale * 0.5 * (M + M.T)


def random_laplacian(rng, N):
    """Laplacian of a random connected graph."""
    return gen_graph(N, int(rng.integers(0, 2**31)))


def random_controllable(rng, n, m, max_tries=50):
    """Random (A, B) with a full-rank controllability matrix."""
    from hlqr.lqr import controllability_ok

    for _ in range(max_tries):
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, m))
        if controllability_ok(A, B):
            return A, B
    raise AssertionError("could not draw a controllable pair")


def random_stable(rng, n, margin=0.5):
    """Random Hurwitz matrix."""
    A = rng.standard_normal((n, n))
    return A - (spectral_abscissa(A) + margin + rng.random()) * np.eye(n)
