"""Benchmark the matching kernels: numba JIT vs pure-numpy fallback.

Times the global matching scan and the multi-window local matching on
the sizes the pipeline actually runs (64x64 grid, 32 channels, window
radii up to 12), and reports how much the full radius ladder costs over
a single largest-window pass (the ladder reuses one distance volume, so
the ratio should stay close to 1).

Run:  python benchmarks/bench_matching.py
Select a backend globally via FGBGVOS_KERNELS=numba|numpy.
"""

import time

import numpy as np

from fgbgvos.matching import available_backends, set_backend
from fgbgvos.matching.backend import kernels

GRID = 64
CHANNELS = 32
RADII = (2, 4, 6, 8, 10, 12)
REPEATS = 5


def timeit(fn, repeats=REPEATS):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    cur = rng.normal(size=(GRID, GRID, CHANNELS))
    prev = rng.normal(size=(GRID, GRID, CHANNELS))
    fg = rng.random((GRID, GRID)) > 0.7

    print(f"grid {GRID}x{GRID}, {CHANNELS} channels, radii {RADII}")
    header = f"{'backend':8s} {'global':>10s} {'local K':>10s} {'local k=12':>11s} {'K/k12':>6s}"
    print(header)
    print("-" * len(header))
    for name in available_backends():
        set_backend(name)
        k = kernels()
        # warm-up (vital for the JIT path)
        k.global_min_sqdist(cur, prev, fg)
        k.local_min_sqdist(cur, prev, fg, RADII)
        k.local_min_sqdist(cur, prev, fg, RADII[-1:])

        t_global = timeit(lambda: k.global_min_sqdist(cur, prev, fg))
        t_multi = timeit(lambda: k.local_min_sqdist(cur, prev, fg, RADII))
        t_single = timeit(lambda: k.local_min_sqdist(cur, prev, fg, RADII[-1:]))
        print(f"{name:8s} {t_global * 1e3:9.1f}ms {t_multi * 1e3:9.1f}ms "
              f"{t_single * 1e3:10.1f}ms {t_multi / t_single:6.2f}")
    set_backend(None)


if __name__ == "__main__":
    main()
