import itertools
import math

import numpy as np
import pytest


def polymer_paths(n):
    """All monotone paths as edge-index lists, enumerated independently of the field code."""
    out = []
    for rpos in itertools.combinations(range(2 * n), n):
        x = y = 0
        edges = []
        rset = set(rpos)
        for step in range(2 * n):
            if step in rset:
                edges.append(x * (n + 1) + y)
                x += 1
            else:
                edges.append(n * (n + 1) + x * n + y)
                y += 1
        out.append(edges)
    return out


def sk_naive_values(n, Z):
    """``s^T Z s / sqrt(2n)`` for every index, with ``s_k = -1`` iff bit ``k`` is set."""
    out = []
    for i in range(2**n):
        s = np.array([-1.0 if (i >> k) & 1 else 1.0 for k in range(n)])
        out.append(float(s @ Z @ s) / math.sqrt(2 * n))
    return np.array(out)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
