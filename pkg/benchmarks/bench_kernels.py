#!/usr/bin/env python3
"""Compare the compiled gather kernel against the numpy fallback.

Times the raw im2col gather and the full dilated-conv forward/backward built
on each backend, over the shapes the trainer actually runs. Invoke from the
repo root:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from wavediff.numerics import buffers
from wavediff.numerics.kernels import _ref

try:
    from wavediff.numerics.kernels import _core
except ImportError:
    _core = None


def timeit(fn, repeats=30):
    fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def gather(impl, x, k, dilation):
    B, L, C = x.shape
    cols = buffers.take((B * L, k * C), x.dtype)
    impl.im2col_1d(x, cols, k, dilation)
    return cols


def conv_forward(impl, x, w, dilation):
    B, L, Ci = x.shape
    Co, _, k = w.shape
    cols = gather(impl, x, k, dilation)
    wm = np.ascontiguousarray(w.transpose(2, 1, 0).reshape(k * Ci, Co))
    return np.matmul(cols, wm, out=buffers.take((B * L, Co), x.dtype))


def conv_backward(impl, x, w, gy, dilation):
    B, L, Ci = x.shape
    Co, _, k = w.shape
    gm = gy.reshape(B * L, Co)
    wflip = np.ascontiguousarray(
        w[:, :, ::-1].transpose(1, 0, 2).transpose(2, 1, 0).reshape(k * Co, Ci)
    )
    gcols = gather(impl, gy, k, dilation)
    gx = np.matmul(gcols, wflip, out=buffers.take((B * L, Ci), x.dtype))
    cols = gather(impl, x, k, dilation)
    gw = cols.T @ gm
    return gx, gw


def main():
    backends = [("python", _ref)]
    if _core is not None:
        backends.append(("compiled", _core))
    else:
        print("compiled kernel not built; showing the fallback only")

    shapes = [
        ("trainer dilated conv", 16, 1024, 32, 64, 3, 4),
        ("trainer grad gather", 16, 1024, 64, 32, 3, 64),
        ("sampler batch", 64, 1024, 32, 64, 3, 256),
        ("wide kernel", 8, 2048, 16, 32, 5, 8),
    ]
    rng = np.random.default_rng(0)
    header = f"{'case':24} {'backend':9} {'im2col ms':>10} {'fwd ms':>8} {'bwd ms':>8}"
    print(header)
    print("-" * len(header))
    for name, B, L, Ci, Co, k, dilation in shapes:
        x = rng.standard_normal((B, L, Ci)).astype(np.float32)
        w = rng.standard_normal((Co, Ci, k)).astype(np.float32)
        gy = rng.standard_normal((B, L, Co)).astype(np.float32)
        for label, impl in backends:
            t_gather = timeit(lambda: gather(impl, x, k, dilation))
            t_fwd = timeit(lambda: conv_forward(impl, x, w, dilation))
            t_bwd = timeit(lambda: conv_backward(impl, x, w, gy, dilation), repeats=15)
            print(f"{name:24} {label:9} {t_gather:10.3f} {t_fwd:8.3f} {t_bwd:8.3f}")

    # consistency: both backends must produce identical columns
    if _core is not None:
        for _, B, L, Ci, Co, k, dilation in shapes:
            x = rng.standard_normal((B, L, Ci)).astype(np.float32)
            a = np.empty((B * L, k * Ci), np.float32)
            b = np.empty((B * L, k * Ci), np.float32)
            _core.im2col_1d(x, a, k, dilation)
            _ref.im2col_1d(x, b, k, dilation)
            assert np.array_equal(a, b)
        print("\nbackends agree bit-for-bit on all benchmarked shapes")


if __name__ == "__main__":
    main()
