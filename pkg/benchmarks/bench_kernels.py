"""Time the numba kernels against the pure-numpy fallback.

Runs each hot kernel on training-scale shapes with both backends and prints
a speedup table. The numbers justify (or refute) keeping the jitted path on
a given machine; the numpy column is what ``CELLVIDGEN_NO_NUMBA=1`` buys.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N] [--batch B] [--size S]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cellvidgen.kernels import _numpy_impl

try:
    from cellvidgen.kernels import _numba_impl
except ImportError:
    _numba_impl = None


def _cases(batch: int, size: int):
    """(name, args-builder) pairs on shapes the U-Nets actually run."""
    rng = np.random.default_rng(0)

    def r(*shape):
        return np.ascontiguousarray(rng.standard_normal(shape))

    x = r(batch, 16, size, size)
    w = r(32, 16, 3, 3)
    b = r(32)
    dy = r(batch, 32, size, size)
    img = r(batch, 2, size, size)
    flow = np.tanh(r(batch, 2, size, size)) * 1.5
    dz = r(batch, 2, size, size)
    return [
        ("conv2d_forward", lambda impl: impl.conv2d_forward(x, w, b)),
        ("conv2d_backward_input", lambda impl: impl.conv2d_backward_input(dy, w)),
        ("conv2d_backward_params", lambda impl: impl.conv2d_backward_params(dy, x, 3, 3)),
        ("warp_forward", lambda impl: impl.warp_forward(img, flow)),
        ("warp_backward", lambda impl: impl.warp_backward(dz, img, flow)),
    ]


def _best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5, help="best-of-N timing")
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--size", type=int, default=64, help="raster side length")
    args = parser.parse_args(argv)

    cases = _cases(args.batch, args.size)
    print(f"batch={args.batch} size={args.size} repeats={args.repeats} "
          f"(best-of timing, float64)")
    header = f"{'kernel':<24} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, call in cases:
        if _numba_impl is not None:
            call(_numba_impl)  # absorb the one-time JIT cost
        np_s = _best_of(lambda: call(_numpy_impl), args.repeats)
        if _numba_impl is None:
            print(f"{name:<24} {np_s * 1e3:>10.2f} {'n/a':>10} {'n/a':>8}")
            continue
        nb_s = _best_of(lambda: call(_numba_impl), args.repeats)
        print(f"{name:<24} {np_s * 1e3:>10.2f} {nb_s * 1e3:>10.2f} "
              f"{np_s / nb_s:>7.1f}x")
    if _numba_impl is None:
        print("\nnumba is not importable here; showing the fallback only.")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
