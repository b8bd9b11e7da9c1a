# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled TSP kernels.

Twin of lastmile._tsp_py; same algorithms, same tie-breaking (first minimum
in ascending index order), so either module can back lastmile.routing.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

DEF EPS = 1e-12


def held_karp_order(double[:, ::1] dist):
    """Optimal closed-tour visit order by subset DP; node 0 starts and ends."""
    cdef int n = dist.shape[0]
    cdef int m = n - 1
    cdef long full = 1 << m
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cost_arr = np.full((full, m), np.inf)
    cdef cnp.ndarray[cnp.int16_t, ndim=2] parent_arr = np.full((full, m), -1, dtype=np.int16)
    cdef double[:, ::1] cost = cost_arr
    cdef short[:, ::1] parent = parent_arr
    cdef long mask, pmask
    cdef int j, k, best_k
    cdef double c, best

    for j in range(m):
        cost[1 << j, j] = dist[0, j + 1]
    for mask in range(1, full):
        if mask & (mask - 1) == 0:
            continue
        for j in range(m):
            if not mask & (<long>1 << j):
                continue
            pmask = mask ^ (<long>1 << j)
            best = np.inf
            best_k = -1
            for k in range(m):
                if not pmask & (<long>1 << k):
                    continue
                c = cost[pmask, k] + dist[k + 1, j + 1]
                if c < best:
                    best = c
                    best_k = k
            cost[mask, j] = best
            parent[mask, j] = best_k

    best = np.inf
    best_k = -1
    for j in range(m):
        c = cost[full - 1, j] + dist[j + 1, 0]
        if c < best:
            best = c
            best_k = j
    cdef list seq = []
    mask = full - 1
    j = best_k
    cdef int nj
    while j >= 0:
        seq.append(j + 1)
        nj = parent[mask, j]
        mask ^= <long>1 << j
        j = nj
    seq.reverse()
    return np.array([0] + seq, dtype=np.int64)


def nearest_neighbor_order(double[:, ::1] dist, int start=0):
    cdef int n = dist.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order_arr = np.zeros(n, dtype=np.int64)
    cdef long[::1] order = order_arr
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] visited_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] visited = visited_arr
    cdef int cur = start, step, k, best_k
    cdef double best, c
    visited[start] = 1
    order[0] = start
    for step in range(1, n):
        best = np.inf
        best_k = -1
        for k in range(n):
            if visited[k]:
                continue
            c = dist[cur, k]
            if c < best:
                best = c
                best_k = k
        cur = best_k
        visited[cur] = 1
        order[step] = cur
    return order_arr


def two_opt_order(double[:, ::1] dist, long[::1] order):
    """First-improvement 2-opt sweeps until a full pass finds nothing."""
    cdef int n = order.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] o_arr = np.asarray(order).copy()
    cdef long[::1] o = o_arr
    if n < 4:
        return o_arr
    cdef int i, j, lo, hi
    cdef long a, b, c, d, tmp
    cdef double delta
    cdef bint improved = True
    while improved:
        improved = False
        for i in range(1, n - 1):
            for j in range(i + 1, n):
                a = o[i - 1]
                b = o[i]
                c = o[j]
                d = o[(j + 1) % n]
                delta = dist[a, c] + dist[b, d] - dist[a, b] - dist[c, d]
                if delta < -EPS:
                    lo = i
                    hi = j
                    while lo < hi:
                        tmp = o[lo]
                        o[lo] = o[hi]
                        o[hi] = tmp
                        lo += 1
                        hi -= 1
                    improved = True
    return o_arr
