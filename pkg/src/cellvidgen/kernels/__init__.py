"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

``BACKEND`` names the fast path chosen at import time: ``"numba"`` when the
JIT backend imported, else ``"numpy"``. Set ``CELLVIDGEN_NO_NUMBA=1`` to
force the numpy fallback for every kernel (also used automatically when
numba is not installed). Both backends share signatures and agree to float
tolerance; ``tests/test_kernels.py`` checks parity.

Routing is per kernel family, not all-or-nothing. The warp kernels are
gather/scatter loops that vectorize poorly in numpy (fancy-indexed
bilinear taps) and run several times faster jitted, so they bind to the
numba backend when it is available. The convolutions lower to einsum/BLAS
in the numpy backend, which beats the scalar JIT loops by an order of
magnitude at training shapes, so they always bind to numpy.
``benchmarks/bench_kernels.py`` measures both backends per kernel and is
the evidence behind this split.
"""

from __future__ import annotations

import os

from . import _numpy_impl

_flag = os.environ.get("CELLVIDGEN_NO_NUMBA", "").strip().lower()
_numba_disabled = _flag not in ("", "0", "false")

if not _numba_disabled:
    try:
        from . import _numba_impl as _jit_backend  # noqa: F401

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - exercised only without numba
        _jit_backend = _numpy_impl
        BACKEND = "numpy"
else:
    _jit_backend = _numpy_impl
    BACKEND = "numpy"

# Convolutions: einsum/BLAS wins, so the numpy implementation is used even
# when numba is available.
conv2d_forward = _numpy_impl.conv2d_forward
conv2d_backward_input = _numpy_impl.conv2d_backward_input
conv2d_backward_params = _numpy_impl.conv2d_backward_params

# Warps: gather-heavy, the jitted loops win when available.
warp_forward = _jit_backend.warp_forward
warp_backward = _jit_backend.warp_backward

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward_input",
    "conv2d_backward_params",
    "warp_forward",
    "warp_backward",
]
