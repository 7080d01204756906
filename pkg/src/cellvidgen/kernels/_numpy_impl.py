"""Pure-numpy reference kernels.

These are the fallback implementations selected when numba is unavailable
or disabled via ``CELLVIDGEN_NO_NUMBA=1``. Convolutions go through
stride-trick windows + einsum (BLAS); warping through vectorized gathers.
All kernels take and return C-contiguous float64 arrays.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 correlation. x (B,Ci,H,W), w (Co,Ci,kh,kw), b (Co,)."""
    kh, kw = w.shape[2], w.shape[3]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    y = np.einsum("bihwpq,oipq->bohw", win, w, optimize=True)
    y += b[None, :, None, None]
    return np.ascontiguousarray(y)


def conv2d_backward_input(dy: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gradient of conv2d_forward w.r.t. its input."""
    # Transpose of same-padded correlation = correlation with the spatially
    # flipped kernel, in/out channels swapped.
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    zeros = np.zeros(wt.shape[0], dtype=dy.dtype)
    return conv2d_forward(dy, wt, zeros)


def conv2d_backward_params(dy: np.ndarray, x: np.ndarray, kh: int, kw: int):
    """Gradients of conv2d_forward w.r.t. weights and bias."""
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    dw = np.einsum("bohw,bihwpq->oipq", dy, win, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(dw), np.ascontiguousarray(db)


def _sample_grid(flow: np.ndarray, H: int, W: int):
    gx = np.arange(W, dtype=flow.dtype)[None, None, :] + flow[:, 0]
    gy = np.arange(H, dtype=flow.dtype)[None, :, None] + flow[:, 1]
    inbx = (gx >= 0.0) & (gx <= W - 1.0)
    inby = (gy >= 0.0) & (gy <= H - 1.0)
    gx = np.clip(gx, 0.0, W - 1.0)
    gy = np.clip(gy, 0.0, H - 1.0)
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = gx - x0
    fy = gy - y0
    return x0, x1, y0, y1, fx, fy, inbx, inby


def warp_forward(img: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Backward warp: out[b,c,y,x] = img sampled at (y+flow_y, x+flow_x).

    Bilinear interpolation, out-of-bounds samples clamp to the border value.
    img (B,C,H,W), flow (B,2,H,W) with channel 0 = x displacement (columns)
    and channel 1 = y displacement (rows).
    """
    B, C, H, W = img.shape
    x0, x1, y0, y1, fx, fy, _, _ = _sample_grid(flow, H, W)
    bi = np.arange(B)[:, None, None]
    w00 = ((1.0 - fy) * (1.0 - fx))[:, None]
    w01 = ((1.0 - fy) * fx)[:, None]
    w10 = (fy * (1.0 - fx))[:, None]
    w11 = (fy * fx)[:, None]
    out = (
        w00 * img[bi, :, y0, x0].transpose(0, 3, 1, 2)
        + w01 * img[bi, :, y0, x1].transpose(0, 3, 1, 2)
        + w10 * img[bi, :, y1, x0].transpose(0, 3, 1, 2)
        + w11 * img[bi, :, y1, x1].transpose(0, 3, 1, 2)
    )
    return np.ascontiguousarray(out)


def warp_backward(dy: np.ndarray, img: np.ndarray, flow: np.ndarray):
    """Gradients of warp_forward w.r.t. image and flow.

    The flow gradient is zeroed per axis: a sample clamped in x (or y) has
    zero slope along that axis only, the other axis still interpolates.
    """
    B, C, H, W = img.shape
    x0, x1, y0, y1, fx, fy, inbx, inby = _sample_grid(flow, H, W)
    bi = np.arange(B)[:, None, None]

    dimg = np.zeros_like(img)
    w00 = ((1.0 - fy) * (1.0 - fx))[:, None]
    w01 = ((1.0 - fy) * fx)[:, None]
    w10 = (fy * (1.0 - fx))[:, None]
    w11 = (fy * fx)[:, None]
    for cw, cy, cx in ((w00, y0, x0), (w01, y0, x1), (w10, y1, x0), (w11, y1, x1)):
        contrib = (cw * dy).transpose(0, 2, 3, 1)  # (B,H,W,C)
        np.add.at(dimg.transpose(0, 2, 3, 1), (bi, cy, cx), contrib)

    g00 = img[bi, :, y0, x0].transpose(0, 3, 1, 2)
    g01 = img[bi, :, y0, x1].transpose(0, 3, 1, 2)
    g10 = img[bi, :, y1, x0].transpose(0, 3, 1, 2)
    g11 = img[bi, :, y1, x1].transpose(0, 3, 1, 2)
    fyb = fy[:, None]
    fxb = fx[:, None]
    dgx = ((1.0 - fyb) * (g01 - g00) + fyb * (g11 - g10)) * dy
    dgy = ((1.0 - fxb) * (g10 - g00) + fxb * (g11 - g01)) * dy
    dflow = np.empty_like(flow)
    dflow[:, 0] = (dgx * inbx.astype(img.dtype)[:, None]).sum(axis=1)
    dflow[:, 1] = (dgy * inby.astype(img.dtype)[:, None]).sum(axis=1)
    return dimg, np.ascontiguousarray(dflow)
