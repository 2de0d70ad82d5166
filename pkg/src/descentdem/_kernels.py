"""Fused numeric kernels for the hash encoding.

The multi-resolution hash encode is the innermost loop of training; the
numba kernels below avoid the large index/weight temporaries a pure numpy
formulation needs. The backward scatter runs single-threaded in a fixed
order so repeated runs stay bitwise identical. A numpy fallback keeps the
package functional without numba.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return deco

    prange = range

_P1 = np.uint32(2654435761)
_P2 = np.uint32(805459861)


@njit(parallel=True, cache=True)
def _encode_fwd(u, res, table, tsize, feat):
    n = u.shape[0]
    levels = res.shape[0]
    out = np.zeros((n, levels * feat), dtype=table.dtype)
    idx = np.empty((n, levels, 8), dtype=np.int64)
    wgt = np.empty((n, levels, 8), dtype=table.dtype)
    mask = np.uint32(tsize - 1)
    for i in prange(n):
        for l in range(levels):
            r = res[l]
            direct = r * r * r <= tsize
            hx = u[i, 0] * (r - 1)
            hy = u[i, 1] * (r - 1)
            hz = u[i, 2] * (r - 1)
            ix = np.int64(hx)
            iy = np.int64(hy)
            iz = np.int64(hz)
            if ix > r - 2:
                ix = r - 2
            if iy > r - 2:
                iy = r - 2
            if iz > r - 2:
                iz = r - 2
            if ix < 0:
                ix = 0
            if iy < 0:
                iy = 0
            if iz < 0:
                iz = 0
            fx = hx - ix
            fy = hy - iy
            fz = hz - iz
            c = 0
            for dx in range(2):
                wx = fx if dx == 1 else 1.0 - fx
                for dy in range(2):
                    wy = fy if dy == 1 else 1.0 - fy
                    for dz in range(2):
                        wz = fz if dz == 1 else 1.0 - fz
                        cx = ix + dx
                        cy = iy + dy
                        cz = iz + dz
                        if direct:
                            j = cx + r * (cy + r * cz)
                        else:
                            h = (
                                np.uint32(cx)
                                ^ (np.uint32(cy) * _P1)
                                ^ (np.uint32(cz) * _P2)
                            )
                            j = np.int64(h & mask)
                        j += l * tsize
                        w = wx * wy * wz
                        idx[i, l, c] = j
                        wgt[i, l, c] = w
                        for f in range(feat):
                            out[i, l * feat + f] += w * table[j, f]
                        c += 1
    return out, idx, wgt


@njit(cache=True)
def _encode_bwd_table(gout, idx, wgt, n_rows, feat):
    n, levels, _ = idx.shape
    gtab = np.zeros((n_rows, feat), dtype=np.float64)
    for i in range(n):
        for l in range(levels):
            for c in range(8):
                j = idx[i, l, c]
                w = wgt[i, l, c]
                for f in range(feat):
                    gtab[j, f] += w * gout[i, l * feat + f]
    return gtab


def encode_forward(u, res, table, tsize, feat):
    """Trilinear hash features plus the index/weight arrays for backward."""
    if HAVE_NUMBA:
        return _encode_fwd(u, res, table, tsize, feat)
    return _encode_fwd_numpy(u, res, table, tsize, feat)


def encode_backward_table(gout, idx, wgt, n_rows, feat):
    if HAVE_NUMBA:
        return _encode_bwd_table(
            np.ascontiguousarray(gout), idx, wgt, n_rows, feat
        )
    gtab = np.zeros((n_rows, feat), dtype=np.float64)
    n, levels, _ = idx.shape
    g = gout.reshape(n, levels, 1, feat)
    contrib = (wgt[..., None] * g).reshape(-1, feat)
    flat = idx.reshape(-1)
    for f in range(feat):
        gtab[:, f] = np.bincount(
            flat, weights=contrib[:, f].astype(np.float64), minlength=n_rows
        )
    return gtab


def _encode_fwd_numpy(u, res, table, tsize, feat):
    n = u.shape[0]
    levels = res.shape[0]
    dtype = table.dtype
    out = np.empty((n, levels * feat), dtype=dtype)
    idx = np.empty((n, levels, 8), dtype=np.int64)
    wgt = np.empty((n, levels, 8), dtype=dtype)
    offs = [(dx, dy, dz) for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)]
    for l in range(levels):
        r = int(res[l])
        scaled = u * (r - 1)
        i0 = np.clip(scaled.astype(np.int64), 0, max(r - 2, 0))
        frac = (scaled - i0).astype(dtype)
        direct = r * r * r <= tsize
        acc = np.zeros((n, feat), dtype=dtype)
        for c, (dx, dy, dz) in enumerate(offs):
            cx = i0[:, 0] + dx
            cy = i0[:, 1] + dy
            cz = i0[:, 2] + dz
            if direct:
                j = cx + r * (cy + r * cz)
            else:
                h = (
                    cx.astype(np.uint32)
                    ^ (cy.astype(np.uint32) * _P1)
                    ^ (cz.astype(np.uint32) * _P2)
                )
                j = (h & np.uint32(tsize - 1)).astype(np.int64)
            j = j + l * tsize
            wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
            w = wx * wy * wz
            idx[:, l, c] = j
            wgt[:, l, c] = w
            acc += w[:, None] * table[j]
        out[:, l * feat : (l + 1) * feat] = acc
    return out, idx, wgt


@njit(parallel=True, cache=True)
def _bilinear_fwd(grid, i00, fx, fy, cols):
    n = i00.shape[0]
    out = np.empty(n, dtype=grid.dtype)
    for i in prange(n):
        j = i00[i]
        w00 = (1.0 - fx[i]) * (1.0 - fy[i])
        w01 = fx[i] * (1.0 - fy[i])
        w10 = (1.0 - fx[i]) * fy[i]
        w11 = fx[i] * fy[i]
        out[i] = (
            w00 * grid[j]
            + w01 * grid[j + 1]
            + w10 * grid[j + cols]
            + w11 * grid[j + cols + 1]
        )
    return out


@njit(cache=True)
def _bilinear_bwd(g, i00, fx, fy, cols, size):
    out = np.zeros(size, dtype=np.float64)
    n = i00.shape[0]
    for i in range(n):
        j = i00[i]
        gi = g[i]
        out[j] += (1.0 - fx[i]) * (1.0 - fy[i]) * gi
        out[j + 1] += fx[i] * (1.0 - fy[i]) * gi
        out[j + cols] += (1.0 - fx[i]) * fy[i] * gi
        out[j + cols + 1] += fx[i] * fy[i] * gi
    return out


def warmup():
    """Force JIT compilation with token inputs (keeps first-use latency out
    of timed paths)."""
    if not HAVE_NUMBA:
        return
    u = np.zeros((2, 3), dtype=np.float32)
    res = np.array([4], dtype=np.int64)
    table = np.zeros((8, 2), dtype=np.float32)
    out, idx, wgt = _encode_fwd(u, res, table, 8, 2)
    _encode_bwd_table(out, idx, wgt, 8, 2)
    grid = np.zeros(16, dtype=np.float32)
    i00 = np.zeros(2, dtype=np.int64)
    f = np.zeros(2, dtype=np.float32)
    _bilinear_fwd(grid, i00, f, f, 4)
    _bilinear_bwd(f.astype(np.float64), i00, f, f, 4, 16)
