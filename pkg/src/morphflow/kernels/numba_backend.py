"""Numba-jitted implementations of the hot kernels.

Loop bodies mirror ``numpy_backend`` exactly: row-major offset scan,
first-wins tie breaking, identical floating point expressions. Forward
kernels are bit-identical to the NumPy path; backward kernels agree up to
summation order (scatter-add collisions).
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _offset_tables(n, K, wrap):
    # tab[i, d] is the source index for offset d at position i; -1 = skip.
    r = K // 2
    tab = np.empty((n, K), dtype=np.int64)
    for i in range(n):
        for d in range(K):
            v = i + d - r
            if wrap:
                tab[i, d] = v % n
            else:
                tab[i, d] = v if 0 <= v < n else -1
    return tab


@njit(cache=True)
def window_min(f, pen, pen_idx, wrap=True):
    M, H, W = f.shape
    K = pen.shape[1]
    out = np.empty_like(f)
    arg = np.empty((M, H, W), dtype=np.int32)
    itab = _offset_tables(H, K, wrap)
    jtab = _offset_tables(W, K, wrap)
    for m in range(M):
        p = pen_idx[m]
        for i in range(H):
            for j in range(W):
                best = np.inf
                besto = 0
                for dy in range(K):
                    ii = itab[i, dy]
                    if ii < 0:
                        continue
                    for dx in range(K):
                        jj = jtab[j, dx]
                        if jj < 0:
                            continue
                        v = f[m, ii, jj] + pen[p, dy, dx]
                        if v < best:
                            best = v
                            besto = dy * K + dx
                out[m, i, j] = best
                arg[m, i, j] = besto
    return out, arg


@njit(cache=True)
def window_max(f, pen, pen_idx, wrap=True):
    M, H, W = f.shape
    K = pen.shape[1]
    out = np.empty_like(f)
    arg = np.empty((M, H, W), dtype=np.int32)
    itab = _offset_tables(H, K, wrap)
    jtab = _offset_tables(W, K, wrap)
    for m in range(M):
        p = pen_idx[m]
        for i in range(H):
            for j in range(W):
                best = -np.inf
                besto = 0
                for dy in range(K):
                    ii = itab[i, dy]
                    if ii < 0:
                        continue
                    for dx in range(K):
                        jj = jtab[j, dx]
                        if jj < 0:
                            continue
                        v = f[m, ii, jj] + pen[p, dy, dx]
                        if v > best:
                            best = v
                            besto = dy * K + dx
                out[m, i, j] = best
                arg[m, i, j] = besto
    return out, arg


@njit(cache=True)
def window_reduce_backward(g, arg, pen_idx, kk, npen):
    M, H, W = g.shape
    r = kk // 2
    df = np.zeros_like(g)
    dpen = np.zeros((npen, kk, kk), dtype=g.dtype)
    for m in range(M):
        p = pen_idx[m]
        for i in range(H):
            for j in range(W):
                o = arg[m, i, j]
                dy = o // kk - r
                dx = o % kk - r
                df[m, (i + dy) % H, (j + dx) % W] += g[m, i, j]
                dpen[p, o // kk, o % kk] += g[m, i, j]
    return df, dpen


@njit(cache=True)
def shift_bilinear(f, sy, sx):
    M, H, W = f.shape
    out = np.empty_like(f)
    for m in range(M):
        fy = -sy[m]
        fx = -sx[m]
        gyf = np.floor(fy)
        gxf = np.floor(fx)
        wy = fy - gyf
        wx = fx - gxf
        gy = int(gyf)
        gx = int(gxf)
        w00 = (1 - wy) * (1 - wx)
        w01 = (1 - wy) * wx
        w10 = wy * (1 - wx)
        w11 = wy * wx
        for i in range(H):
            i0 = (i + gy) % H
            i1 = (i0 + 1) % H
            for j in range(W):
                j0 = (j + gx) % W
                j1 = (j0 + 1) % W
                out[m, i, j] = (w00 * f[m, i0, j0] + w01 * f[m, i0, j1]
                                + w10 * f[m, i1, j0] + w11 * f[m, i1, j1])
    return out


@njit(cache=True)
def shift_bilinear_backward(g, f, sy, sx):
    M, H, W = f.shape
    df = np.zeros_like(f)
    dsy = np.zeros(M, dtype=f.dtype)
    dsx = np.zeros(M, dtype=f.dtype)
    for m in range(M):
        fy = -sy[m]
        fx = -sx[m]
        gyf = np.floor(fy)
        gxf = np.floor(fx)
        wy = fy - gyf
        wx = fx - gxf
        gy = int(gyf)
        gx = int(gxf)
        w00 = (1 - wy) * (1 - wx)
        w01 = (1 - wy) * wx
        w10 = wy * (1 - wx)
        w11 = wy * wx
        ay = 0.0
        ax = 0.0
        for i in range(H):
            i0 = (i + gy) % H
            i1 = (i0 + 1) % H
            for j in range(W):
                j0 = (j + gx) % W
                j1 = (j0 + 1) % W
                gm = g[m, i, j]
                df[m, i0, j0] += w00 * gm
                df[m, i0, j1] += w01 * gm
                df[m, i1, j0] += w10 * gm
                df[m, i1, j1] += w11 * gm
                c00 = f[m, i0, j0]
                c01 = f[m, i0, j1]
                c10 = f[m, i1, j0]
                c11 = f[m, i1, j1]
                ay += gm * ((1 - wx) * (c10 - c00) + wx * (c11 - c01))
                ax += gm * ((1 - wy) * (c01 - c00) + wy * (c11 - c10))
        dsy[m] = -ay
        dsx[m] = -ax
    return df, dsy, dsx


@njit(cache=True)
def torus_minconv(f, pen):
    M, H, W = f.shape
    out = np.empty_like(f)
    for m in range(M):
        for i in range(H):
            for j in range(W):
                best = np.inf
                for a in range(H):
                    dy = (i - a) % H
                    for b in range(W):
                        v = f[m, a, b] + pen[dy, (j - b) % W]
                        if v < best:
                            best = v
                out[m, i, j] = best
    return out


@njit(cache=True)
def upwind_gradnorm(u, h, erosion, p):
    H, W = u.shape
    out = np.empty_like(u)
    for i in range(H):
        im = (i - 1) % H
        ip = (i + 1) % H
        for j in range(W):
            jm = (j - 1) % W
            jp = (j + 1) % W
            dm0 = (u[i, j] - u[im, j]) / h
            dp0 = (u[ip, j] - u[i, j]) / h
            dm1 = (u[i, j] - u[i, jm]) / h
            dp1 = (u[i, jp] - u[i, j]) / h
            if erosion:
                a0 = max(dm0, 0.0)
                b0 = min(dp0, 0.0)
                a1 = max(dm1, 0.0)
                b1 = min(dp1, 0.0)
            else:
                a0 = min(dm0, 0.0)
                b0 = max(dp0, 0.0)
                a1 = min(dm1, 0.0)
                b1 = max(dp1, 0.0)
            if p == 2:
                out[i, j] = np.sqrt(a0 * a0 + b0 * b0 + a1 * a1 + b1 * b1)
            else:
                m0 = max(abs(a0), abs(b0))
                m1 = max(abs(a1), abs(b1))
                if p == 1:
                    out[i, j] = m0 + m1
                else:
                    out[i, j] = max(m0, m1)
    return out
