"""Benchmark the hot kernels: numba-compiled vs pure numpy vs pure python.

Run:
    python3 benchmarks/bench_kernels.py

The active backend is selected at import time by REGIONTRAJ_DISABLE_NUMBA;
this script times all three implementations directly, so a single run
compares them regardless of the flag.
"""
import time

import numpy as np

from regiontraj import _kernels


def _time(fn, *args, repeat=5, number=20):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / number)
    return best


def bench_splat():
    rng = np.random.default_rng(0)
    n_agents = 50
    rows = rng.uniform(0, 79, size=n_agents)
    cols = rng.uniform(0, 79, size=n_agents)
    sigma, radius = 2.0, 8.0

    variants = [("numpy", _kernels._splat_gaussians_np),
                ("python", _kernels._splat_gaussians_py)]
    if _kernels.USE_NUMBA:
        out = np.zeros((80, 80))
        _kernels.splat_gaussians(out, rows, cols, sigma, radius)  # warm up JIT
        variants.insert(0, ("numba", _kernels.splat_gaussians))

    print(f"gaussian splatting: {n_agents} agents onto an 80x80 grid")
    base = None
    for name, fn in variants:
        t = _time(fn, np.zeros((80, 80)), rows, cols, sigma, radius)
        base = base or t
        print(f"  {name:<8} {t * 1e6:10.1f} us/frame   ({base / t:5.1f}x)")


def bench_kde():
    rng = np.random.default_rng(1)
    S = 2000
    sx = rng.normal(size=S)
    sy = rng.normal(size=S)

    variants = [("numpy", _kernels._kde_logpdf_np),
                ("python", _kernels._kde_logpdf_py)]
    if _kernels.USE_NUMBA:
        _kernels.kde_logpdf(sx, sy, 0.3, 0.3, 0.0, 0.0)  # warm up JIT
        variants.insert(0, ("numba", _kernels.kde_logpdf))

    print(f"\nkde log-density: {S}-component mixture, one query point")
    base = None
    for name, fn in variants:
        t = _time(fn, sx, sy, 0.3, 0.3, 0.1, -0.2, number=50)
        base = base or t
        print(f"  {name:<8} {t * 1e6:10.1f} us/query   ({base / t:5.1f}x)")


if __name__ == "__main__":
    backend = "numba" if _kernels.USE_NUMBA else "numpy (REGIONTRAJ_DISABLE_NUMBA=1)"
    print(f"active backend: {backend}\n")
    bench_splat()
    bench_kde()
