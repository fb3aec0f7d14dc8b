"""The exhaustive ML search loop, with a compiled and a pure-numpy implementation.

The public names dispatch on :mod:`sfim._accel`; the ``*_numpy`` and
``*_numba`` variants stay importable so tests and the benchmark can compare
them directly.
"""

from __future__ import annotations

import numpy as np

from ._accel import HAVE_NUMBA, njit


# --------------------------------------------------------------------------
# exhaustive joint ML search

def ml_search_numpy(y, contribs):
    """Minimize ||y - sum_u contribs[u, k_u]||^2 over all index tuples.

    ``contribs`` has shape (U, M, P). Ties resolve to the lexicographically
    smallest tuple (user 0 most significant).
    """
    U, M, P = contribs.shape
    last = contribs[U - 1]
    best, best_idx = np.inf, np.zeros(U, dtype=np.int64)
    idx = np.zeros(U - 1, dtype=np.int64)
    while True:
        partial = y.copy()
        for u in range(U - 1):
            partial -= contribs[u, idx[u]]
        diff = partial[None, :] - last
        metric = diff.real ** 2 + diff.imag ** 2
        r = metric.sum(axis=1)
        k = int(np.argmin(r))
        if r[k] < best:
            best = float(r[k])
            best_idx[:U - 1] = idx
            best_idx[U - 1] = k
        u = U - 2
        while u >= 0:
            idx[u] += 1
            if idx[u] < M:
                break
            idx[u] = 0
            u -= 1
        if u < 0:
            break
    return best_idx, best


def _ml_search_loop(y, contribs):
    U, M, P = contribs.shape
    partial = np.zeros((U + 1, P), dtype=np.complex128)
    for u in range(U):
        partial[u + 1] = partial[u] + contribs[u, 0]
    idx = np.zeros(U, dtype=np.int64)
    best_idx = np.zeros(U, dtype=np.int64)
    best = np.inf
    while True:
        # partial sums only grow, so stop once the incumbent cannot be beaten
        r = 0.0
        for p in range(P):
            d = y[p] - partial[U, p]
            r += d.real * d.real + d.imag * d.imag
            if r >= best:
                break
        if r < best:
            best = r
            best_idx[:] = idx
        u = U - 1
        while u >= 0:
            idx[u] += 1
            if idx[u] < M:
                break
            idx[u] = 0
            u -= 1
        if u < 0:
            break
        for v in range(u, U):
            for p in range(P):
                partial[v + 1, p] = partial[v, p] + contribs[v, idx[v], p]
    return best_idx, best


ml_search_numba = njit(_ml_search_loop) if HAVE_NUMBA else None


def ml_search(y, contribs):
    y = np.ascontiguousarray(y, dtype=np.complex128)
    contribs = np.ascontiguousarray(contribs, dtype=np.complex128)
    if HAVE_NUMBA:
        return ml_search_numba(y, contribs)
    return ml_search_numpy(y, contribs)
