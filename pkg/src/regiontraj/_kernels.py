"""Hot numeric kernels with numba acceleration and a pure-numpy fallback.

Set REGIONTRAJ_DISABLE_NUMBA=1 to force the numpy path (useful for debugging
and for the benchmark in benchmarks/bench_kernels.py). Both paths produce the
same values up to float rounding; the test suite checks them against each
other.
"""
import math
import os

import numpy as np

USE_NUMBA = os.environ.get("REGIONTRAJ_DISABLE_NUMBA", "0") != "1"


def _splat_gaussians_py(out, rows, cols, sigma, radius):
    """Accumulate unit-mass truncated Gaussian kernels into `out` in place."""
    H, W = out.shape
    norm = 1.0 / (2.0 * math.pi * sigma * sigma)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    for i in range(rows.shape[0]):
        r0 = max(int(math.floor(rows[i] - radius)), 0)
        r1 = min(int(math.ceil(rows[i] + radius)), H - 1)
        c0 = max(int(math.floor(cols[i] - radius)), 0)
        c1 = min(int(math.ceil(cols[i] + radius)), W - 1)
        for r in range(r0, r1 + 1):
            dr = r - rows[i]
            for c in range(c0, c1 + 1):
                dc = c - cols[i]
                d2 = dr * dr + dc * dc
                if d2 <= radius * radius:
                    out[r, c] += norm * math.exp(-d2 * inv2s2)
    return out


def _splat_gaussians_np(out, rows, cols, sigma, radius):
    # Vectorized over the kernel footprint per agent; agents are few per frame
    # so the python loop over agents is not the bottleneck here.
    H, W = out.shape
    norm = 1.0 / (2.0 * np.pi * sigma * sigma)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    for i in range(rows.shape[0]):
        r0 = max(int(np.floor(rows[i] - radius)), 0)
        r1 = min(int(np.ceil(rows[i] + radius)), H - 1)
        c0 = max(int(np.floor(cols[i] - radius)), 0)
        c1 = min(int(np.ceil(cols[i] + radius)), W - 1)
        if r1 < r0 or c1 < c0:
            continue
        rr = np.arange(r0, r1 + 1, dtype=np.float64) - rows[i]
        cc = np.arange(c0, c1 + 1, dtype=np.float64) - cols[i]
        d2 = rr[:, None] ** 2 + cc[None, :] ** 2
        patch = norm * np.exp(-d2 * inv2s2)
        patch[d2 > radius * radius] = 0.0
        out[r0 : r1 + 1, c0 : c1 + 1] += patch
    return out


def _kde_logpdf_py(sx, sy, hx, hy, qx, qy):
    """Log density of a product-kernel Gaussian mixture at one query point."""
    S = sx.shape[0]
    log_norm = -math.log(2.0 * math.pi * hx * hy)
    m = -1e300
    # log-sum-exp in two passes for stability
    exps = np.empty(S)
    for i in range(S):
        zx = (qx - sx[i]) / hx
        zy = (qy - sy[i]) / hy
        e = -0.5 * (zx * zx + zy * zy)
        exps[i] = e
        if e > m:
            m = e
    acc = 0.0
    for i in range(S):
        acc += math.exp(exps[i] - m)
    return log_norm + m + math.log(acc) - math.log(S)


def _kde_logpdf_np(sx, sy, hx, hy, qx, qy):
    z2 = ((qx - sx) / hx) ** 2 + ((qy - sy) / hy) ** 2
    e = -0.5 * z2
    m = np.max(e)
    return (
        -np.log(2.0 * np.pi * hx * hy)
        + m
        + np.log(np.sum(np.exp(e - m)))
        - np.log(sx.shape[0])
    )


if USE_NUMBA:
    from numba import njit

    splat_gaussians = njit(cache=True)(_splat_gaussians_py)
    kde_logpdf = njit(cache=True)(_kde_logpdf_py)
else:
    splat_gaussians = _splat_gaussians_np
    kde_logpdf = _kde_logpdf_np
