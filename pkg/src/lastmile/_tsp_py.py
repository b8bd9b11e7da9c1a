"""Pure-Python TSP kernels.

Fallback twin of the compiled module lastmile._tspc. The two must stay
behaviorally identical, including tie-breaking (first minimum wins, scanned
in ascending index order), so results do not depend on which one is loaded.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def held_karp_order(dist: np.ndarray) -> np.ndarray:
    """Optimal closed-tour visit order by subset DP; dist is (n, n), n >= 2.

    Node 0 is the start/end. Returns the visit order as int64 indices,
    beginning at 0, without repeating the final return to 0.
    """
    n = dist.shape[0]
    m = n - 1  # cities 0..m-1 stand for nodes 1..n-1
    full = 1 << m
    cost = np.full((full, m), np.inf)
    parent = np.full((full, m), -1, dtype=np.int16)
    for j in range(m):
        cost[1 << j, j] = dist[0, j + 1]
    for mask in range(1, full):
        if mask & (mask - 1) == 0:  # singletons are the base case
            continue
        for j in range(m):
            if not mask & (1 << j):
                continue
            pmask = mask ^ (1 << j)
            cand = cost[pmask] + dist[1:, j + 1]
            k = int(np.argmin(cand))
            cost[mask, j] = cand[k]
            parent[mask, j] = k
    closing = cost[full - 1] + dist[1:, 0]
    j = int(np.argmin(closing))
    seq = []
    mask = full - 1
    while j >= 0:
        seq.append(j + 1)
        nj = int(parent[mask, j])
        mask ^= 1 << j
        j = nj
    seq.reverse()
    return np.array([0] + seq, dtype=np.int64)


def nearest_neighbor_order(dist: np.ndarray, start: int = 0) -> np.ndarray:
    n = dist.shape[0]
    visited = np.zeros(n, dtype=bool)
    visited[start] = True
    order = [start]
    cur = start
    for _ in range(n - 1):
        row = dist[cur].copy()
        row[visited] = np.inf
        cur = int(np.argmin(row))
        visited[cur] = True
        order.append(cur)
    return np.array(order, dtype=np.int64)


def two_opt_order(dist: np.ndarray, order: np.ndarray) -> np.ndarray:
    """First-improvement 2-opt sweeps until a full pass finds nothing.

    Position 0 (the depot) is pinned; the tour is treated as closed.
    """
    o = [int(v) for v in order]
    n = len(o)
    if n < 4:
        return np.array(o, dtype=np.int64)
    improved = True
    while improved:
        improved = False
        for i in range(1, n - 1):
            for j in range(i + 1, n):
                a, b = o[i - 1], o[i]
                c, d = o[j], o[(j + 1) % n]
                delta = dist[a, c] + dist[b, d] - dist[a, b] - dist[c, d]
                if delta < -_EPS:
                    o[i : j + 1] = o[i : j + 1][::-1]
                    improved = True
    return np.array(o, dtype=np.int64)
