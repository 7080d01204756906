"""Numba-jitted kernels.

Sequential loops (no prange) so summation order, and therefore the float64
result, is fixed; this keeps same-seed runs byte-identical. ``cache=True``
amortizes JIT compilation across processes.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(x, w, b):
    # Shift-and-accumulate: the innermost row loops are branch-free and
    # contiguous so LLVM vectorizes them; per-pixel term order matches the
    # naive (c, p, q) accumulation, keeping results bit-stable.
    B, Ci, H, W = x.shape
    Co, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    y = np.empty((B, Co, H, W), dtype=x.dtype)
    for n in range(B):
        for o in range(Co):
            yo = y[n, o]
            for i in range(H):
                for j in range(W):
                    yo[i, j] = b[o]
            for c in range(Ci):
                xc = x[n, c]
                for p in range(kh):
                    di = p - ph
                    ilo = max(0, -di)
                    ihi = min(H, H - di)
                    for q in range(kw):
                        dj = q - pw
                        jlo = max(0, -dj)
                        jhi = min(W, W - dj)
                        wv = w[o, c, p, q]
                        for i in range(ilo, ihi):
                            xr = xc[i + di]
                            yr = yo[i]
                            for j in range(jlo, jhi):
                                yr[j] += wv * xr[j + dj]
    return y


@njit(cache=True)
def conv2d_backward_input(dy, w):
    B, Co, H, W = dy.shape
    _, Ci, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    dx = np.zeros((B, Ci, H, W), dtype=dy.dtype)
    for n in range(B):
        for o in range(Co):
            dyo = dy[n, o]
            for c in range(Ci):
                dxc = dx[n, c]
                for p in range(kh):
                    di = p - ph
                    ilo = max(0, -di)
                    ihi = min(H, H - di)
                    for q in range(kw):
                        dj = q - pw
                        jlo = max(0, -dj)
                        jhi = min(W, W - dj)
                        wv = w[o, c, p, q]
                        for i in range(ilo, ihi):
                            dr = dxc[i + di]
                            gr = dyo[i]
                            for j in range(jlo, jhi):
                                dr[j + dj] += wv * gr[j]
    return dx


@njit(cache=True)
def conv2d_backward_params(dy, x, kh, kw):
    B, Co, H, W = dy.shape
    Ci = x.shape[1]
    ph, pw = kh // 2, kw // 2
    dw = np.zeros((Co, Ci, kh, kw), dtype=dy.dtype)
    db = np.zeros(Co, dtype=dy.dtype)
    for n in range(B):
        for o in range(Co):
            dyo = dy[n, o]
            for i in range(H):
                for j in range(W):
                    db[o] += dyo[i, j]
            for c in range(Ci):
                xc = x[n, c]
                for p in range(kh):
                    di = p - ph
                    ilo = max(0, -di)
                    ihi = min(H, H - di)
                    for q in range(kw):
                        dj = q - pw
                        jlo = max(0, -dj)
                        jhi = min(W, W - dj)
                        acc = 0.0
                        for i in range(ilo, ihi):
                            gr = dyo[i]
                            xr = xc[i + di]
                            for j in range(jlo, jhi):
                                acc += gr[j] * xr[j + dj]
                        dw[o, c, p, q] += acc
    return dw, db


@njit(cache=True)
def warp_forward(img, flow):
    B, C, H, W = img.shape
    out = np.empty_like(img)
    for n in range(B):
        for i in range(H):
            for j in range(W):
                gx = j + flow[n, 0, i, j]
                gy = i + flow[n, 1, i, j]
                if gx < 0.0:
                    gx = 0.0
                elif gx > W - 1.0:
                    gx = W - 1.0
                if gy < 0.0:
                    gy = 0.0
                elif gy > H - 1.0:
                    gy = H - 1.0
                x0 = int(np.floor(gx))
                y0 = int(np.floor(gy))
                x1 = min(x0 + 1, W - 1)
                y1 = min(y0 + 1, H - 1)
                fx = gx - x0
                fy = gy - y0
                for c in range(C):
                    out[n, c, i, j] = (
                        (1.0 - fy) * (1.0 - fx) * img[n, c, y0, x0]
                        + (1.0 - fy) * fx * img[n, c, y0, x1]
                        + fy * (1.0 - fx) * img[n, c, y1, x0]
                        + fy * fx * img[n, c, y1, x1]
                    )
    return out


@njit(cache=True)
def warp_backward(dy, img, flow):
    B, C, H, W = img.shape
    dimg = np.zeros_like(img)
    dflow = np.zeros_like(flow)
    for n in range(B):
        for i in range(H):
            for j in range(W):
                rx = j + flow[n, 0, i, j]
                ry = i + flow[n, 1, i, j]
                inbx = 0.0 <= rx <= W - 1.0
                inby = 0.0 <= ry <= H - 1.0
                gx = min(max(rx, 0.0), W - 1.0)
                gy = min(max(ry, 0.0), H - 1.0)
                x0 = int(np.floor(gx))
                y0 = int(np.floor(gy))
                x1 = min(x0 + 1, W - 1)
                y1 = min(y0 + 1, H - 1)
                fx = gx - x0
                fy = gy - y0
                accx = 0.0
                accy = 0.0
                for c in range(C):
                    g = dy[n, c, i, j]
                    dimg[n, c, y0, x0] += (1.0 - fy) * (1.0 - fx) * g
                    dimg[n, c, y0, x1] += (1.0 - fy) * fx * g
                    dimg[n, c, y1, x0] += fy * (1.0 - fx) * g
                    dimg[n, c, y1, x1] += fy * fx * g
                    accx += ((1.0 - fy) * (img[n, c, y0, x1] - img[n, c, y0, x0])
                             + fy * (img[n, c, y1, x1] - img[n, c, y1, x0])) * g
                    accy += ((1.0 - fx) * (img[n, c, y1, x0] - img[n, c, y0, x0])
                             + fx * (img[n, c, y1, x1] - img[n, c, y0, x1])) * g
                if inbx:
                    dflow[n, 0, i, j] = accx
                if inby:
                    dflow[n, 1, i, j] = accy
    return dimg, dflow
