"""Independent oracles shared by the test modules."""
import itertools

import mpmath
import numpy as np
import pytest

from derrt import hmm
from derrt.numerics.rng import rng_stream


def brute_force_loglik(model: hmm.HmmModel, feats) -> float:
    """log P(features) summed over all K^T hidden paths in 50-digit arithmetic."""
    feats = np.asarray(feats, float)
    K, T = model.n_states, len(feats)
    logB = model.emission_logprob(feats)
    mpmath.mp.dps = 50
    total = mpmath.mpf(0)
    for path in itertools.product(range(K), repeat=T):
        lp = mpmath.mpf(model.log_pi[path[0]]) + mpmath.mpf(logB[0, path[0]])
        for t in range(1, T):
            lp += mpmath.mpf(model.log_A[path[t - 1], path[t]]) + mpmath.mpf(logB[t, path[t]])
        total += mpmath.exp(lp)
    return float(mpmath.log(total))


def central_difference(f, x, h=1e-5):
    """Numerical gradient of scalar ``f`` with respect to array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


@pytest.fixture
def rng():
    return rng_stream(1234, 0)
