"""Kernel backend selection and the padded-call wrappers.

The hot convolution kernels exist twice: numba-compiled loops
(`_kernels_numba`) and a pure-numpy im2col path (`_kernels_numpy`).
The active backend is chosen once at import time from the
CSCSEG_BACKEND environment variable ("numba" or "numpy"); unset means
numba when importable, numpy otherwise. `benchmarks/bench_backends.py`
compares the two.
"""

import os

import numpy as np

# Avoid probing the (broken-version) TBB layer; workqueue is always present.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

_requested = os.environ.get("CSCSEG_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(f"CSCSEG_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested in ("", "numba"):
    try:
        from . import _kernels_numba as _impl

        _BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import _kernels_numpy as _impl

        _BACKEND = "numpy"
else:
    from . import _kernels_numpy as _impl

    _BACKEND = "numpy"


def active_backend() -> str:
    return _BACKEND


def _pad2d(x, pad_h, pad_w=None):
    # Faster than np.pad: allocate once and zero only the border ring.
    if pad_w is None:
        pad_w = pad_h
    if pad_h == 0 and pad_w == 0:
        return np.ascontiguousarray(x)
    n, c, h, w = x.shape
    out = np.empty((n, c, h + 2 * pad_h, w + 2 * pad_w), dtype=x.dtype)
    if pad_h:
        out[:, :, :pad_h, :] = 0
        out[:, :, pad_h + h:, :] = 0
    if pad_w:
        out[:, :, pad_h:pad_h + h, :pad_w] = 0
        out[:, :, pad_h:pad_h + h, pad_w + w:] = 0
    out[:, :, pad_h:pad_h + h, pad_w:pad_w + w] = x
    return out


def _conv2d_padded(xp, w, stride, oh, ow):
    n = xp.shape[0]
    c_out, _, k_h, k_w = w.shape
    dtype = np.result_type(xp, w)
    w = np.ascontiguousarray(w)
    k3 = getattr(_impl, "conv2d_k3s1_kernel", None)
    if stride == 1 and k_h == 3 and k_w == 3 and k3 is not None:
        out = np.empty((n, c_out, oh, ow), dtype=dtype)  # first channel writes
        k3(xp, w, out)
    else:
        out = np.zeros((n, c_out, oh, ow), dtype=dtype)
        _impl.conv2d_kernel(xp, w, stride, out)
    return out


def conv2d(x, w, stride, padding):
    """Cross-correlation of NCHW input with (c_out, c_in, kh, kw) kernel."""
    k_h, k_w = w.shape[2], w.shape[3]
    oh = (x.shape[2] + 2 * padding - k_h) // stride + 1
    ow = (x.shape[3] + 2 * padding - k_w) // stride + 1
    return _conv2d_padded(_pad2d(x, padding), w, stride, oh, ow)


def conv2d_input_grad(gy, w, stride, padding, in_h, in_w):
    """Adjoint of conv2d with respect to its input, for a given input size."""
    n = gy.shape[0]
    c_in = w.shape[1]
    k_h, k_w = w.shape[2], w.shape[3]
    q_h, q_w = k_h - 1 - padding, k_w - 1 - padding
    if stride == 1 and q_h >= 0 and q_w >= 0:
        # The stride-1 adjoint is itself a convolution: flip the kernel
        # spatially, swap its channel axes, and pad by k - 1 - p. This
        # rides the fast forward path (including the 3x3 stencil).
        wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        return _conv2d_padded(_pad2d(gy, q_h, q_w), wf, 1, in_h, in_w)
    if (stride > 1 and q_h >= 0 and q_w >= 0 and k_h == 3 and k_w == 3
            and hasattr(_impl, "conv2d_k3s1_kernel")):
        # Strided adjoint as a stride-1 conv over the zero-stuffed
        # cotangent; 4x the nominal flops but the stencil path wins.
        # Left/top padding is k-1-p; right/bottom padding additionally
        # absorbs stride leftovers (input pixels past the canonical size
        # can still sit under the last kernel window, so the core must be
        # computed out to in_h/in_w rather than zero-extended).
        sh = (gy.shape[2] - 1) * stride + 1
        sw = (gy.shape[3] - 1) * stride + 1
        r_h = in_h + k_h - 1 - q_h - sh
        r_w = in_w + k_w - 1 - q_w - sw
        dtype = np.result_type(gy, w)
        buf = np.zeros((n, gy.shape[1], q_h + sh + r_h, q_w + sw + r_w), dtype=dtype)
        buf[:, :, q_h:q_h + sh:stride, q_w:q_w + sw:stride] = gy
        wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        return _conv2d_padded(buf, wf, 1, in_h, in_w)
    dtype = np.result_type(gy, w)
    gxp = np.zeros((n, c_in, in_h + 2 * padding, in_w + 2 * padding), dtype=dtype)
    _impl.conv2d_input_grad_kernel(
        np.ascontiguousarray(gy), np.ascontiguousarray(w), stride, gxp
    )
    if padding == 0:
        return gxp
    return np.ascontiguousarray(gxp[:, :, padding:padding + in_h, padding:padding + in_w])


def conv2d_kernel_grad(x, gy, stride, padding, k_h, k_w):
    """Adjoint of conv2d with respect to its kernel."""
    c_in = x.shape[1]
    c_out = gy.shape[1]
    xp = _pad2d(x, padding)
    dtype = np.result_type(x, gy)
    gw = np.zeros((c_out, c_in, k_h, k_w), dtype=dtype)
    gy = np.ascontiguousarray(gy)
    k3 = getattr(_impl, "conv2d_kernel_grad_k3s1_kernel", None)
    if stride == 1 and k_h == 3 and k_w == 3 and k3 is not None:
        k3(xp, gy, gw)
    else:
        _impl.conv2d_kernel_grad_kernel(xp, gy, stride, gw)
    return gw


def upsample2x(x, taps_h, taps_w):
    """Bilinear 2x gather; taps from ops._bilinear_taps."""
    i0, i1, w0, w1 = taps_h
    j0, j1, v0, v1 = taps_w
    n, c, h, w = x.shape
    out = np.empty((n, c, 2 * h, 2 * w), dtype=x.dtype)
    _impl.upsample2x_kernel(
        np.ascontiguousarray(x), i0, i1, w0, w1, j0, j1, v0, v1, out
    )
    return out


def upsample2x_adjoint(g, taps_h, taps_w):
    """Scatter adjoint of bilinear 2x upsampling; taps from ops._bilinear_taps."""
    i0, i1, w0, w1 = taps_h
    j0, j1, v0, v1 = taps_w
    n, c, h2, w2 = g.shape
    out = np.zeros((n, c, h2 // 2, w2 // 2), dtype=g.dtype)
    _impl.upsample2x_adjoint_kernel(
        np.ascontiguousarray(g), i0, i1, w0, w1, j0, j1, v0, v1, out
    )
    return out


def warmup(dtypes=(np.float32, np.float64)):
    """Trigger JIT compilation of all kernels (no-op on the numpy path)."""
    from . import ops

    for dt in dtypes:
        x = np.ones((1, 2, 5, 5), dtype=dt)
        w = np.ones((3, 2, 3, 3), dtype=dt)
        for stride in (1, 2):
            y = conv2d(x, w, stride, 1)
            conv2d_input_grad(y, w, stride, 1, 5, 5)
            conv2d_kernel_grad(x, y, stride, 1, 3, 3)
        w1 = np.ones((3, 2, 1, 1), dtype=dt)
        y1 = conv2d(x, w1, 1, 0)
        conv2d_input_grad(y1, w1, 1, 0, 5, 5)
        conv2d_kernel_grad(x, y1, 1, 0, 1, 1)
        ops.upsample2x_adjoint(np.ones((1, 1, 6, 6), dtype=dt))
