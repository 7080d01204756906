"""Minimal reverse-mode autodiff on numpy arrays.

Just enough machinery to train the two encoder-decoder networks in this
package: broadcast add/mul, matmul, conv2d, warping, SiLU/leaky-ReLU,
2x pooling/upsampling, channel concat, basic slicing, and mean/square for
the losses. Gradients are float64 end to end so finite-difference checks
are tight.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..kernels import (
    conv2d_backward_input,
    conv2d_backward_params,
    conv2d_forward,
    warp_backward,
    warp_forward,
)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(tensor: Tensor, grad: np.ndarray):
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.data)
    tensor.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to ``shape`` (reverses numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise --------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(grad):
        _accumulate(a, _unbroadcast(grad, a.data.shape))
        _accumulate(b, _unbroadcast(grad, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(grad):
        _accumulate(a, _unbroadcast(grad * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(grad * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def square(a) -> Tensor:
    a = _wrap(a)
    data = a.data * a.data

    def backward(grad):
        _accumulate(a, grad * (2.0 * a.data))

    return _make(data, (a,), backward)


def silu(a) -> Tensor:
    a = _wrap(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    data = a.data * sig

    def backward(grad):
        _accumulate(a, grad * (sig * (1.0 + a.data * (1.0 - sig))))

    return _make(data, (a,), backward)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _wrap(a)
    pos = a.data > 0.0
    data = np.where(pos, a.data, slope * a.data)

    def backward(grad):
        _accumulate(a, grad * np.where(pos, 1.0, slope))

    return _make(data, (a,), backward)


# -- reductions ---------------------------------------------------------

def mean(a) -> Tensor:
    a = _wrap(a)
    data = np.asarray(a.data.mean())
    n = a.data.size

    def backward(grad):
        _accumulate(a, np.full_like(a.data, float(grad) / n))

    return _make(data, (a,), backward)


def mse(a, b) -> Tensor:
    """Mean squared error, the workhorse loss."""
    return mean(square(add(_wrap(a), mul(_wrap(b), -1.0))))


# -- linear algebra -----------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data @ b.data

    def backward(grad):
        _accumulate(a, grad @ b.data.T)
        _accumulate(b, a.data.T @ grad)

    return _make(data, (a, b), backward)


# -- structure ops ------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    data = a.data.reshape(shape)

    def backward(grad):
        _accumulate(a, grad.reshape(a.data.shape))

    return _make(data, (a,), backward)


def concat_channels(a, b) -> Tensor:
    """Concatenate two (B,C,H,W) tensors along the channel axis."""
    a, b = _wrap(a), _wrap(b)
    ca = a.data.shape[1]
    data = np.concatenate([a.data, b.data], axis=1)

    def backward(grad):
        _accumulate(a, grad[:, :ca])
        _accumulate(b, grad[:, ca:])

    return _make(data, (a, b), backward)


def getitem(a, index) -> Tensor:
    a = _wrap(a)
    data = a.data[index]

    def backward(grad):
        full = np.zeros_like(a.data)
        full[index] = grad
        _accumulate(a, full)

    return _make(np.ascontiguousarray(data), (a,), backward)


# -- spatial ops --------------------------------------------------------

def avg_pool2(a) -> Tensor:
    """2x2 average pooling on (B,C,H,W); H and W must be even."""
    a = _wrap(a)
    B, C, H, W = a.data.shape
    data = a.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def backward(grad):
        up = np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3)
        _accumulate(a, up * 0.25)

    return _make(np.ascontiguousarray(data), (a,), backward)


def upsample_nearest2(a) -> Tensor:
    """Nearest-neighbor 2x upsampling on (B,C,H,W)."""
    a = _wrap(a)
    data = np.repeat(np.repeat(a.data, 2, axis=2), 2, axis=3)

    def backward(grad):
        B, C, H2, W2 = grad.shape
        down = grad.reshape(B, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5))
        _accumulate(a, down)

    return _make(np.ascontiguousarray(data), (a,), backward)


def conv2d(x, w, b) -> Tensor:
    """Same-padded stride-1 convolution via the kernel backend."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    data = conv2d_forward(xd, wd, np.ascontiguousarray(b.data))
    kh, kw = wd.shape[2], wd.shape[3]

    def backward(grad):
        grad = np.ascontiguousarray(grad)
        if x.requires_grad:
            _accumulate(x, conv2d_backward_input(grad, wd))
        if w.requires_grad or b.requires_grad:
            dw, db = conv2d_backward_params(grad, xd, kh, kw)
            _accumulate(w, dw)
            _accumulate(b, db)

    return _make(data, (x, w, b), backward)


def warp(img, flow) -> Tensor:
    """Differentiable backward warp of (B,C,H,W) images by (B,2,H,W) flows."""
    img, flow = _wrap(img), _wrap(flow)
    imd = np.ascontiguousarray(img.data)
    fld = np.ascontiguousarray(flow.data)
    if imd.shape[0] != fld.shape[0] or imd.shape[2:] != fld.shape[2:] or fld.shape[1] != 2:
        raise ValueError(f"image {imd.shape} and flow {fld.shape} are not congruent")
    data = warp_forward(imd, fld)

    def backward(grad):
        dimg, dflow = warp_backward(np.ascontiguousarray(grad), imd, fld)
        _accumulate(img, dimg)
        _accumulate(flow, dflow)

    return _make(data, (img, flow), backward)
