"""Numba-jitted matching kernels (default path).

Same contract as ``kernels_numpy``; see ``backend``. Loops scan
candidates in row-major order with a strict ``<`` update, so the first
minimizer wins ties and results are independent of thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def _global_scan(curf, reff, fgf, min_fg, arg_fg, min_bg, arg_bg):
    p_total, c = curf.shape
    r_total = reff.shape[0]
    for p in prange(p_total):
        best_f = np.inf
        best_b = np.inf
        arg_f = np.int64(-1)
        arg_b = np.int64(-1)
        for q in range(r_total):
            d2 = 0.0
            for ch in range(c):
                t = curf[p, ch] - reff[q, ch]
                d2 += t * t
            if fgf[q]:
                if d2 < best_f:
                    best_f = d2
                    arg_f = q
            else:
                if d2 < best_b:
                    best_b = d2
                    arg_b = q
        min_fg[p] = best_f
        arg_fg[p] = arg_f
        min_bg[p] = best_b
        arg_bg[p] = arg_b


@njit(cache=True, parallel=True)
def _local_volume(cur, prev, fg, kmax, vol_fg, vol_bg):
    h, w, c = cur.shape
    width = 2 * kmax + 1
    for p in prange(h * w):
        py = p // w
        px = p % w
        for dy in range(-kmax, kmax + 1):
            qy = py + dy
            if qy < 0 or qy >= h:
                continue
            for dx in range(-kmax, kmax + 1):
                qx = px + dx
                if qx < 0 or qx >= w:
                    continue
                d2 = 0.0
                for ch in range(c):
                    t = cur[py, px, ch] - prev[qy, qx, ch]
                    d2 += t * t
                o = (dy + kmax) * width + (dx + kmax)
                if fg[qy, qx]:
                    vol_fg[p, o] = d2
                else:
                    vol_bg[p, o] = d2


@njit(cache=True, parallel=True)
def _local_reduce(vol, h, w, kmax, radii, out_min, out_arg):
    # One row-major pass over the largest window per pixel. Each offset
    # updates only the running best of its radius band (band i holds
    # Chebyshev distances in (radii[i-1], radii[i]]), then radius i
    # combines bands 0..i lexicographically by (value, scan rank), which
    # reproduces exactly the first row-major minimizer a per-radius scan
    # would pick. Cost per offset is O(1), so the whole ladder runs at
    # single-window speed over the shared volume.
    width = 2 * kmax + 1
    n = radii.shape[0]
    band_of = np.empty(kmax + 1, np.int64)
    for c in range(kmax + 1):
        b = n - 1
        for i in range(n - 1, -1, -1):
            if radii[i] >= c:
                b = i
        band_of[c] = b
    for p in prange(h * w):
        py = p // w
        px = p % w
        band_v = np.full(n, np.inf)
        band_o = np.full(n, np.int64(width * width))
        for dy in range(-kmax, kmax + 1):
            ady = dy if dy >= 0 else -dy
            for dx in range(-kmax, kmax + 1):
                o = (dy + kmax) * width + (dx + kmax)
                v = vol[p, o]
                if v == np.inf:
                    continue
                adx = dx if dx >= 0 else -dx
                cheb = ady if ady >= adx else adx
                b = band_of[cheb]
                if v < band_v[b]:
                    band_v[b] = v
                    band_o[b] = o
        best = np.inf
        best_o = np.int64(width * width)
        for i in range(n):
            if band_v[i] < best or (band_v[i] == best and band_o[i] < best_o):
                best = band_v[i]
                best_o = band_o[i]
            out_min[i, p] = best
            if best == np.inf:
                out_arg[i, p] = -1
            else:
                qy = py + best_o // width - kmax
                qx = px + best_o % width - kmax
                out_arg[i, p] = qy * w + qx


def global_min_sqdist(cur, ref, fg):
    """See ``kernels_numpy.global_min_sqdist``."""
    hc, wc, c = cur.shape
    hr, wr = fg.shape
    curf = np.ascontiguousarray(cur.reshape(hc * wc, c))
    reff = np.ascontiguousarray(ref.reshape(hr * wr, c))
    fgf = np.ascontiguousarray(fg.reshape(-1))

    dtype = curf.dtype
    p = curf.shape[0]
    min_fg = np.empty(p, dtype=dtype)
    arg_fg = np.empty(p, dtype=np.int64)
    min_bg = np.empty(p, dtype=dtype)
    arg_bg = np.empty(p, dtype=np.int64)
    _global_scan(curf, reff, fgf, min_fg, arg_fg, min_bg, arg_bg)

    shape = (hc, wc)
    return (
        min_fg.reshape(shape),
        arg_fg.reshape(shape),
        min_bg.reshape(shape),
        arg_bg.reshape(shape),
    )


def local_min_sqdist(cur, prev, fg, radii):
    """See ``kernels_numpy.local_min_sqdist``."""
    h, w, _ = cur.shape
    radii = tuple(int(k) for k in radii)
    kmax = radii[-1]
    width = 2 * kmax + 1
    dtype = cur.dtype

    cur = np.ascontiguousarray(cur)
    prev = np.ascontiguousarray(prev)
    fg = np.ascontiguousarray(fg)

    vol_fg = np.full((h * w, width * width), np.inf, dtype=dtype)
    vol_bg = np.full((h * w, width * width), np.inf, dtype=dtype)
    _local_volume(cur, prev, fg, kmax, vol_fg, vol_bg)

    n = len(radii)
    radii_arr = np.asarray(radii, dtype=np.int64)
    min_fg = np.empty((n, h * w), dtype=dtype)
    arg_fg = np.empty((n, h * w), dtype=np.int64)
    min_bg = np.empty((n, h * w), dtype=dtype)
    arg_bg = np.empty((n, h * w), dtype=np.int64)
    _local_reduce(vol_fg, h, w, kmax, radii_arr, min_fg, arg_fg)
    _local_reduce(vol_bg, h, w, kmax, radii_arr, min_bg, arg_bg)

    shape = (n, h, w)
    return (
        min_fg.reshape(shape),
        arg_fg.reshape(shape),
        min_bg.reshape(shape),
        arg_bg.reshape(shape),
    )
