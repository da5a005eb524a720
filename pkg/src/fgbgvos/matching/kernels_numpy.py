"""Pure-numpy matching kernels (fallback path).

Same contract as ``kernels_numba``; see ``backend`` for the shared
conventions. The global kernel uses the |a|^2 + |b|^2 - 2ab expansion
chunked over query rows; the local kernel materializes the squared
distance volume for the largest window once and reduces every smaller
window by masked minima over it.
"""

from __future__ import annotations

import numpy as np

# Rows of the query grid processed per GEMM chunk; bounds peak memory at
# roughly chunk * h * w floats.
_GLOBAL_CHUNK = 4096


def global_min_sqdist(cur, ref, fg):
    """Min squared embedding distance to the fg / bg pixel sets of ``ref``.

    cur: (hc, wc, C) float, ref: (hr, wr, C) float, fg: (hr, wr) bool.
    Returns (min_fg, arg_fg, min_bg, arg_bg); args are flat row-major
    indices into the reference grid, -1 (with +inf distance) where the
    set is empty.
    """
    hc, wc, c = cur.shape
    hr, wr = fg.shape
    curf = np.ascontiguousarray(cur.reshape(hc * wc, c))
    reff = np.ascontiguousarray(ref.reshape(hr * wr, c))
    fgf = fg.reshape(-1)

    dtype = curf.dtype
    p = curf.shape[0]
    min_fg = np.full(p, np.inf, dtype=dtype)
    arg_fg = np.full(p, -1, dtype=np.int64)
    min_bg = np.full(p, np.inf, dtype=dtype)
    arg_bg = np.full(p, -1, dtype=np.int64)

    ref_sq = (reff * reff).sum(axis=1)
    cur_sq = (curf * curf).sum(axis=1)
    has_fg = bool(fgf.any())
    has_bg = bool((~fgf).any())

    for start in range(0, p, _GLOBAL_CHUNK):
        stop = min(start + _GLOBAL_CHUNK, p)
        d2 = cur_sq[start:stop, None] + ref_sq[None, :] - 2.0 * (curf[start:stop] @ reff.T)
        np.maximum(d2, 0.0, out=d2)
        if has_fg:
            dfg = np.where(fgf[None, :], d2, np.inf)
            arg = dfg.argmin(axis=1)
            min_fg[start:stop] = dfg[np.arange(stop - start), arg]
            arg_fg[start:stop] = arg
        if has_bg:
            dbg = np.where(~fgf[None, :], d2, np.inf)
            arg = dbg.argmin(axis=1)
            min_bg[start:stop] = dbg[np.arange(stop - start), arg]
            arg_bg[start:stop] = arg

    shape = (hc, wc)
    return (
        min_fg.reshape(shape),
        arg_fg.reshape(shape),
        min_bg.reshape(shape),
        arg_bg.reshape(shape),
    )


def local_min_sqdist(cur, prev, fg, radii):
    """Windowed min squared distances against the previous frame.

    cur, prev: (h, w, C) float; fg: (h, w) bool; radii: ascending ints.
    For each radius k the candidate set is the fg (resp. bg) pixels of
    ``prev`` at Chebyshev distance <= k. Returns (min_fg, arg_fg,
    min_bg, arg_bg) shaped (n, h, w); empty windows give +inf / -1.
    """
    h, w, _ = cur.shape
    radii = tuple(int(k) for k in radii)
    kmax = radii[-1]
    width = 2 * kmax + 1
    n_off = width * width
    dtype = cur.dtype

    # Offset table in row-major (dy, dx) order so that argmin picks the
    # first minimizer in reference-grid row-major order.
    offs = [(dy, dx) for dy in range(-kmax, kmax + 1) for dx in range(-kmax, kmax + 1)]

    vol_fg = np.full((n_off, h, w), np.inf, dtype=dtype)
    vol_bg = np.full((n_off, h, w), np.inf, dtype=dtype)
    qidx = np.full((n_off, h, w), -1, dtype=np.int64)

    yy = np.arange(h)[:, None]
    xx = np.arange(w)[None, :]

    for o, (dy, dx) in enumerate(offs):
        # query rows p for which q = p + offset stays on the grid
        y0, y1 = max(0, -dy), min(h, h - dy)
        x0, x1 = max(0, -dx), min(w, w - dx)
        if y1 <= y0 or x1 <= x0:
            continue
        cy, cx = slice(y0, y1), slice(x0, x1)
        py, px = slice(y0 + dy, y1 + dy), slice(x0 + dx, x1 + dx)
        diff = cur[cy, cx] - prev[py, px]
        d2 = (diff * diff).sum(axis=-1)
        m = fg[py, px]
        vol_fg[o, cy, cx] = np.where(m, d2, np.inf)
        vol_bg[o, cy, cx] = np.where(m, np.inf, d2)
        qidx[o, cy, cx] = (yy[cy, :] + dy) * w + (xx[:, cx] + dx)

    n = len(radii)
    min_fg = np.empty((n, h, w), dtype=dtype)
    arg_fg = np.empty((n, h, w), dtype=np.int64)
    min_bg = np.empty((n, h, w), dtype=dtype)
    arg_bg = np.empty((n, h, w), dtype=np.int64)

    for i, k in enumerate(radii):
        sel = [o for o, (dy, dx) in enumerate(offs) if abs(dy) <= k and abs(dx) <= k]
        qsel = qidx[sel]

        sub = vol_fg[sel]
        am = sub.argmin(axis=0)
        mn = np.take_along_axis(sub, am[None], axis=0)[0]
        aq = np.take_along_axis(qsel, am[None], axis=0)[0]
        aq[~np.isfinite(mn)] = -1
        min_fg[i] = mn
        arg_fg[i] = aq

        sub = vol_bg[sel]
        am = sub.argmin(axis=0)
        mn = np.take_along_axis(sub, am[None], axis=0)[0]
        aq = np.take_along_axis(qsel, am[None], axis=0)[0]
        aq[~np.isfinite(mn)] = -1
        min_bg[i] = mn
        arg_bg[i] = aq

    return min_fg, arg_fg, min_bg, arg_bg
