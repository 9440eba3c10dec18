"""Pure-NumPy implementations of the hot kernels.

These are the fallback path when numba is disabled (``MORPHFLOW_NUMBA=0``)
or unavailable. They must agree bit-for-bit with the numba backend: both
scan window offsets in the same row-major order and break ties on the
first candidate, so values, argmin indices, and gradients are identical.

Array conventions:
  - field stacks are (M, H, W) where M collapses batch*channel,
  - penalty tables are (P, K, K) with K = 2*radius+1, selected per slice
    through ``pen_idx`` (length M, entries in [0, P)),
  - offset ids are row-major: o = (dy+r)*K + (dx+r).
"""

from __future__ import annotations

import numpy as np


def window_min(f: np.ndarray, pen: np.ndarray, pen_idx: np.ndarray,
               wrap: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Penalized windowed minimum: out[m,i,j] = min_off f[m,i+dy,j+dx] + pen[.,dy,dx].

    Returns (values, argmin offset ids). With ``wrap`` False, offsets that
    leave the grid are skipped instead of wrapping around.
    """
    M, H, W = f.shape
    K = pen.shape[1]
    r = K // 2
    pens = pen[pen_idx]  # (M, K, K)
    out = np.full((M, H, W), np.inf, dtype=f.dtype)
    arg = np.zeros((M, H, W), dtype=np.int32)
    for dy in range(-r, r + 1):
        ry = np.roll(f, -dy, axis=1)
        for dx in range(-r, r + 1):
            o = (dy + r) * K + (dx + r)
            v = np.roll(ry, -dx, axis=2) + pens[:, dy + r, dx + r][:, None, None]
            if not wrap:
                ii = np.arange(H) + dy
                jj = np.arange(W) + dx
                bad = (ii < 0) | (ii >= H)
                v[:, bad, :] = np.inf
                bad = (jj < 0) | (jj >= W)
                v[:, :, bad] = np.inf
            better = v < out
            out[better] = v[better]
            arg[better] = o
    return out, arg


def window_max(f: np.ndarray, pen: np.ndarray, pen_idx: np.ndarray,
               wrap: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Penalized windowed maximum: out[m,i,j] = max_off f[m,i+dy,j+dx] + pen[.,dy,dx]."""
    M, H, W = f.shape
    K = pen.shape[1]
    r = K // 2
    pens = pen[pen_idx]
    out = np.full((M, H, W), -np.inf, dtype=f.dtype)
    arg = np.zeros((M, H, W), dtype=np.int32)
    for dy in range(-r, r + 1):
        ry = np.roll(f, -dy, axis=1)
        for dx in range(-r, r + 1):
            o = (dy + r) * K + (dx + r)
            v = np.roll(ry, -dx, axis=2) + pens[:, dy + r, dx + r][:, None, None]
            if not wrap:
                ii = np.arange(H) + dy
                jj = np.arange(W) + dx
                bad = (ii < 0) | (ii >= H)
                v[:, bad, :] = -np.inf
                bad = (jj < 0) | (jj >= W)
                v[:, :, bad] = -np.inf
            better = v > out
            out[better] = v[better]
            arg[better] = o
    return out, arg


def window_reduce_backward(g: np.ndarray, arg: np.ndarray, pen_idx: np.ndarray,
                           kk: int, npen: int) -> tuple[np.ndarray, np.ndarray]:
    """Route cotangents of a windowed min/max to the selected offsets.

    df[m, (i+dy)%H, (j+dx)%W] += g[m,i,j] and dpen[pen_idx[m], dy, dx] += g[m,i,j]
    where (dy, dx) decodes arg[m,i,j]. Shared by min and max (the sign of the
    penalty is handled by the caller).
    """
    M, H, W = g.shape
    r = kk // 2
    df = np.zeros_like(g)
    dpen = np.zeros((npen, kk, kk), dtype=g.dtype)
    dy = arg // kk - r
    dx = arg % kk - r
    ii = (np.arange(H)[None, :, None] + dy) % H
    jj = (np.arange(W)[None, None, :] + dx) % W
    mm = np.broadcast_to(np.arange(M)[:, None, None], g.shape)
    np.add.at(df, (mm, ii, jj), g)
    pp = np.broadcast_to(pen_idx[:, None, None], g.shape)
    np.add.at(dpen, (pp, arg // kk, arg % kk), g)
    return df, dpen


def shift_bilinear(f: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Periodic sub-pixel shift: out[m,i,j] = f_m interpolated at (i-sy[m], j-sx[m])."""
    M, H, W = f.shape
    out = np.empty_like(f)
    # Integer part becomes a roll, fractional part a 4-corner blend; shifts
    # repeat across batch slices, so group identical (sy, sx) pairs.
    pairs = np.stack([sy, sx], axis=1)
    uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
    for u in range(uniq.shape[0]):
        vy, vx = uniq[u]
        gy = int(np.floor(-vy))
        gx = int(np.floor(-vx))
        wy = f.dtype.type(-vy - gy)
        wx = f.dtype.type(-vx - gx)
        sel = np.nonzero(inv == u)[0]
        base = np.roll(f[sel], (-gy, -gx), axis=(1, 2))
        rowp = np.roll(base, -1, axis=1)
        out[sel] = ((1 - wy) * (1 - wx) * base
                    + (1 - wy) * wx * np.roll(base, -1, axis=2)
                    + wy * (1 - wx) * rowp
                    + wy * wx * np.roll(rowp, -1, axis=2))
    return out


def shift_bilinear_backward(g: np.ndarray, f: np.ndarray, sy: np.ndarray,
                            sx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward of shift_bilinear: grads for the field and both shift components."""
    M, H, W = f.shape
    df = np.zeros_like(f)
    dsy = np.zeros(M, dtype=f.dtype)
    dsx = np.zeros(M, dtype=f.dtype)
    for m in range(M):
        gy = int(np.floor(-sy[m]))
        gx = int(np.floor(-sx[m]))
        wy = f.dtype.type(-sy[m] - gy)
        wx = f.dtype.type(-sx[m] - gx)
        base = np.roll(f[m], (-gy, -gx), axis=(0, 1))
        c00 = base
        c01 = np.roll(base, -1, axis=1)
        c10 = np.roll(base, -1, axis=0)
        c11 = np.roll(c10, -1, axis=1)
        gm = g[m]
        # d out / d sample position, then d position / d shift = -1.
        ddy = (1 - wx) * (c10 - c00) + wx * (c11 - c01)
        ddx = (1 - wy) * (c01 - c00) + wy * (c11 - c10)
        dsy[m] = -np.sum(gm * ddy)
        dsx[m] = -np.sum(gm * ddx)
        grid = np.zeros((H, W), dtype=f.dtype)
        grid += (1 - wy) * (1 - wx) * gm
        grid_01 = (1 - wy) * wx * gm
        grid_10 = wy * (1 - wx) * gm
        grid_11 = wy * wx * gm
        acc = grid
        acc = acc + np.roll(grid_01, 1, axis=1)
        acc = acc + np.roll(grid_10, 1, axis=0)
        acc = acc + np.roll(np.roll(grid_11, 1, axis=0), 1, axis=1)
        df[m] += np.roll(acc, (gy, gx), axis=(0, 1))
    return df, dsy, dsx


def torus_minconv(f: np.ndarray, pen: np.ndarray) -> np.ndarray:
    """Exhaustive min-convolution on the torus.

    out[m,i,j] = min over all grid points (a,b) of f[m,a,b] + pen[(i-a)%H,(j-b)%W].
    """
    M, H, W = f.shape
    out = np.full_like(f, np.inf)
    for dy in range(H):
        ry = np.roll(f, dy, axis=1)
        for dx in range(W):
            v = np.roll(ry, dx, axis=2) + pen[dy, dx]
            np.minimum(out, v, out=out)
    return out


def upwind_gradnorm(u: np.ndarray, h: float, erosion: bool, p: int) -> np.ndarray:
    """Upwind approximation of the p-norm of the gradient on a periodic grid.

    Erosion uses the (max(D^-,0), min(D^+,0)) one-sided selection; dilation
    mirrors it. p is 1, 2, or 0 (0 encodes the sup norm).
    """
    dm0 = (u - np.roll(u, 1, axis=0)) / h
    dp0 = (np.roll(u, -1, axis=0) - u) / h
    dm1 = (u - np.roll(u, 1, axis=1)) / h
    dp1 = (np.roll(u, -1, axis=1) - u) / h
    if erosion:
        a0 = np.maximum(dm0, 0.0)
        b0 = np.minimum(dp0, 0.0)
        a1 = np.maximum(dm1, 0.0)
        b1 = np.minimum(dp1, 0.0)
    else:
        a0 = np.minimum(dm0, 0.0)
        b0 = np.maximum(dp0, 0.0)
        a1 = np.minimum(dm1, 0.0)
        b1 = np.maximum(dp1, 0.0)
    if p == 2:
        return np.sqrt(a0 * a0 + b0 * b0 + a1 * a1 + b1 * b1)
    m0 = np.maximum(np.abs(a0), np.abs(b0))
    m1 = np.maximum(np.abs(a1), np.abs(b1))
    if p == 1:
        return m0 + m1
    return np.maximum(m0, m1)
