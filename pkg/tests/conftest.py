import itertools

import numpy as np
import pytest


def brute_best(w, n, k, exclude=None):
    """Lexicographically first maximizer of sum(w[M]) over size-k sets."""
    best, best_val = None, -np.inf
    for c in itertools.combinations(range(n), k):
        if exclude is not None and c == tuple(exclude):
            continue
        v = float(np.sum(np.asarray(w)[list(c)]))
        if v > best_val + 1e-12:
            best, best_val = c, v
    return best, best_val


@pytest.fixture
def fixture_A():
    return np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]])
