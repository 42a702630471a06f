import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_row_stochastic(rng, n, k):
    """Random responsibilities via softmax of Gaussian logits."""
    logits = rng.standard_normal((n, k))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)
