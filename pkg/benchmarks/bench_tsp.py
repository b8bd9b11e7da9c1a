"""Timing comparison of the compiled route kernels against the pure fallback.

Run after installing the package:

    python benchmarks/bench_tsp.py

Both backends must return identical tours; this script asserts that before
printing timings, so it doubles as a quick twin-consistency check.
"""

import time

import numpy as np

from lastmile import _tsp_py
from lastmile.routing import COMPILED, distance_matrix, tour_length

try:
    from lastmile import _tspc
except ImportError:
    _tspc = None


def _random_dist(rng, n):
    pts = rng.uniform(-4.0, 4.0, size=(n, 2))
    return distance_matrix([type("P", (), {"x": x, "y": y})() for x, y in pts])


def _time(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_exact(rng, sizes=(10, 13, 16)):
    print("Held-Karp exact solve (best of 5):")
    for n in sizes:
        dist = _random_dist(rng, n)
        t_py, order_py = _time(_tsp_py.held_karp_order, dist)
        row = "  n=%2d  pure %8.2f ms" % (n, t_py * 1e3)
        if _tspc is not None:
            t_c, order_c = _time(_tspc.held_karp_order, np.ascontiguousarray(dist))
            assert list(order_py) == list(np.asarray(order_c)), "backend tours differ"
            row += "  compiled %8.2f ms  speedup %5.1fx" % (t_c * 1e3, t_py / t_c)
        print(row)


def bench_heuristic(rng, sizes=(30, 60, 120)):
    print("nearest-neighbor + 2-opt (best of 5):")
    for n in sizes:
        dist = _random_dist(rng, n)
        def run_py():
            o = _tsp_py.nearest_neighbor_order(dist)
            return _tsp_py.two_opt_order(dist, o)
        t_py, order_py = _time(run_py)
        row = "  n=%3d  pure %8.2f ms" % (n, t_py * 1e3)
        if _tspc is not None:
            cdist = np.ascontiguousarray(dist)
            def run_c():
                o = _tspc.nearest_neighbor_order(cdist)
                return _tspc.two_opt_order(cdist, np.asarray(o, dtype=np.int64))
            t_c, order_c = _time(run_c)
            assert abs(
                tour_length(dist, list(order_py)) - tour_length(dist, list(np.asarray(order_c)))
            ) < 1e-9, "backend tour lengths differ"
            row += "  compiled %8.2f ms  speedup %5.1fx" % (t_c * 1e3, t_py / t_c)
        print(row)


def main():
    print("compiled backend importable: %s (routing uses compiled: %s)"
          % (_tspc is not None, COMPILED))
    rng = np.random.default_rng(7)
    bench_exact(rng)
    bench_heuristic(rng)


if __name__ == "__main__":
    main()
