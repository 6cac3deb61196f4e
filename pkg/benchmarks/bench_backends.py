#!/usr/bin/env python
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the three convolution entry points exactly as the package calls
them (including the 3x3 stencil dispatch and the flipped-kernel adjoint
route) with each backend implementation swapped in, and reports per-call
timings, speedups, and the max absolute discrepancy. Run from the repo
root:

    python benchmarks/bench_backends.py [--iters 20] [--dtype f32]
"""

import argparse
import os
import time

# Keep the BLAS pool out of the numba pool's way (OpenBLAS workers
# spin-wait after each call and would contend on small machines).
# Override with OPENBLAS_NUM_THREADS=<n> to benchmark threaded BLAS.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np

from cscseg import backend, _kernels_numpy
from cscseg.rng import Stream

try:
    from cscseg import _kernels_numba

    HAVE_NUMBA = True
except ImportError:
    _kernels_numba = None
    HAVE_NUMBA = False

SHAPES = [
    # (n, c_in, h, w, c_out, k, stride, padding)
    (4, 16, 96, 96, 8, 3, 1, 1),
    (4, 32, 48, 48, 16, 3, 1, 1),
    (4, 48, 24, 24, 24, 3, 1, 1),
    (4, 16, 96, 96, 32, 3, 2, 1),
]


def _run_case(impl, x, w, gy, stride, pad):
    saved = backend._impl
    backend._impl = impl
    try:
        out = backend.conv2d(x, w, stride, pad)
        gx = backend.conv2d_input_grad(gy, w, stride, pad, x.shape[2], x.shape[3])
        gw = backend.conv2d_kernel_grad(x, gy, stride, pad, w.shape[2], w.shape[3])
    finally:
        backend._impl = saved
    return out, gx, gw


def bench(iters, dtype):
    stream = Stream(0, "bench")
    print(f"dtype={np.dtype(dtype).name}, iters={iters}, "
          f"active backend={backend.active_backend()}")
    header = (f"{'shape':<34} {'numpy ms':>10} {'numba ms':>10} "
              f"{'speedup':>8} {'max |diff|':>12}")
    print(header)
    print("-" * len(header))
    for n, c_in, h, w_, c_out, k, stride, pad in SHAPES:
        x = stream.normal((n, c_in, h, w_)).astype(dtype)
        wk = stream.normal((c_out, c_in, k, k)).astype(dtype)
        oh = (h + 2 * pad - k) // stride + 1
        ow = (w_ + 2 * pad - k) // stride + 1
        gy = stream.normal((n, c_out, oh, ow)).astype(dtype)

        # numba timed first: OpenBLAS worker threads spin-wait after a BLAS
        # call and would otherwise contend with the numba thread pool.
        results = {}
        times = {}
        for name, impl in (("numba", _kernels_numba), ("numpy", _kernels_numpy)):
            if impl is None:
                continue
            results[name] = _run_case(impl, x, wk, gy, stride, pad)  # warm/JIT
            t0 = time.perf_counter()
            for _ in range(iters):
                _run_case(impl, x, wk, gy, stride, pad)
            times[name] = (time.perf_counter() - t0) / iters * 1e3

        label = f"n{n} c{c_in}->{c_out} {h}x{w_} k{k} s{stride}"
        if HAVE_NUMBA:
            diff = max(
                float(np.abs(a - b).max())
                for a, b in zip(results["numpy"], results["numba"])
            )
            speedup = times["numpy"] / times["numba"]
            print(f"{label:<34} {times['numpy']:>10.2f} {times['numba']:>10.2f} "
                  f"{speedup:>7.2f}x {diff:>12.3e}")
        else:
            print(f"{label:<34} {times['numpy']:>10.2f} {'n/a':>10} "
                  f"{'n/a':>8} {'n/a':>12}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--iters", type=int, default=20)
    parser.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    args = parser.parse_args()
    bench(args.iters, np.float32 if args.dtype == "f32" else np.float64)


if __name__ == "__main__":
    main()
