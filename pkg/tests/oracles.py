"""Independent reference computations shared by the test modules."""

import itertools

import numpy as np


def enumerate_paths(log_w, log_a, kernels, r0):
    """Brute-force law of a factorised path measure over every path.

    Returns the path array, the normalised law ``Q`` and the reference law ``R``.
    """
    N, T = len(r0), len(kernels)
    paths = np.array(list(itertools.product(range(N), repeat=T + 1)))
    R = np.asarray(r0)[paths[:, 0]].astype(float)
    for t in range(T):
        R = R * kernels[t][paths[:, t], paths[:, t + 1]]
    logd = log_w[paths[:, 0], paths[:, -1]] + sum(log_a[t][paths[:, t]] for t in range(T + 1))
    Q = R * np.exp(logd - logd.max())
    return paths, Q / Q.sum(), R


def relative_entropy(p, q):
    p, q = np.ravel(p), np.ravel(q)
    pos = p > 0
    if np.any(q[pos] == 0):
        return np.inf
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])))


def random_stochastic(rng, N, sym=True):
    """Row-stochastic matrix, symmetric (hence doubly stochastic) when ``sym``."""
    if sym:
        A = rng.uniform(0.2, 1.0, (N, N))
        A = A + A.T
        for _ in range(500):
            A /= A.sum(1, keepdims=True)
            A = 0.5 * (A + A.T)
        return A / A.sum(1, keepdims=True)
    A = rng.uniform(0.2, 1.0, (N, N))
    return A / A.sum(1, keepdims=True)
