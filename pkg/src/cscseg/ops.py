"""Dense NCHW tensor operators with exact shape and adjoint contracts.

Tensors are plain numpy arrays in (batch, channel, height, width) layout,
float32 or float64. float64 is the default for every verification suite;
float32 is used by the training loop. All operators here are pure
functions of their inputs except `batch_norm` in train mode, which
updates the running statistics of the `BNState` it is handed.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ShapeError


def conv_out_size(size, k, stride, padding):
    """Output size along one axis: floor((size + 2p - k) / stride) + 1."""
    return (size + 2 * padding - k) // stride + 1


@dataclass
class ConvSpec:
    """A convolution kernel plus its stride and symmetric zero padding.

    kernel has shape (c_out, c_in, k_h, k_w). The convolution is the
    cross-correlation used throughout deep learning (no kernel flip) and
    carries no bias term.
    """

    kernel: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel)
        if self.kernel.ndim != 4:
            raise ShapeError(f"kernel must be rank 4, got shape {self.kernel.shape}")
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"padding must be >= 0, got {self.padding}")

    @property
    def c_out(self):
        return self.kernel.shape[0]

    @property
    def c_in(self):
        return self.kernel.shape[1]

    @property
    def k_h(self):
        return self.kernel.shape[2]

    @property
    def k_w(self):
        return self.kernel.shape[3]

    def out_hw(self, h, w):
        oh = conv_out_size(h, self.k_h, self.stride, self.padding)
        ow = conv_out_size(w, self.k_w, self.stride, self.padding)
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"conv output would be {oh}x{ow} for input {h}x{w} with "
                f"kernel {self.k_h}x{self.k_w}, stride {self.stride}, "
                f"padding {self.padding}"
            )
        return oh, ow

    def transpose_hw(self, oh, ow):
        """Canonical input size recovered from an output size."""
        h = self.stride * (oh - 1) + self.k_h - 2 * self.padding
        w = self.stride * (ow - 1) + self.k_w - 2 * self.padding
        return h, w


def conv2d(x, spec: ConvSpec):
    """Strided cross-correlation; linear in both x and spec.kernel."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 4, got shape {x.shape}")
    if x.shape[1] != spec.c_in:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} vs kernel {spec.kernel.shape}"
        )
    spec.out_hw(x.shape[2], x.shape[3])
    return backend.conv2d(x, spec.kernel, spec.stride, spec.padding)


def conv_transpose2d(y, spec: ConvSpec, out_hw=None):
    """Exact adjoint of `conv2d` with the same spec.

    For every x of spatial size out_hw and y of the matching conv2d
    output size, <conv2d(x, spec), y> == <x, conv_transpose2d(y, spec,
    out_hw)>. When stride > 1 several input sizes share one output size,
    so out_hw selects which adjoint domain is meant; the default is the
    canonical size stride*(n-1) + k - 2*padding.
    """
    if y.ndim != 4:
        raise ShapeError(f"conv_transpose2d input must be rank 4, got shape {y.shape}")
    if y.shape[1] != spec.c_out:
        raise ShapeError(
            f"conv_transpose2d channel mismatch: input {y.shape} vs kernel "
            f"{spec.kernel.shape}"
        )
    if out_hw is None:
        out_hw = spec.transpose_hw(y.shape[2], y.shape[3])
    h, w = out_hw
    if h < 1 or w < 1:
        raise ShapeError(f"conv_transpose2d output size {h}x{w} invalid for {y.shape}")
    if spec.out_hw(h, w) != (y.shape[2], y.shape[3]):
        raise ShapeError(
            f"conv_transpose2d: size {h}x{w} does not conv to {y.shape[2]}x{y.shape[3]} "
            f"with kernel {spec.k_h}x{spec.k_w}, stride {spec.stride}, "
            f"padding {spec.padding}"
        )
    return backend.conv2d_input_grad(y, spec.kernel, spec.stride, spec.padding, h, w)


def relu(x):
    """Elementwise max(0, v)."""
    return np.maximum(x, 0)


@dataclass
class BNState:
    """Per-channel batch-norm parameters and running statistics.

    gamma/beta are the learnable affine terms (shared by reference with
    the network's Param objects); mean/var are running statistics used in
    eval mode. eps defaults to 1e-5 and momentum to 0.1; neither is
    dictated by the decoder algorithm, so both are explicit state here
    for reproducibility.
    """

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def create(cls, channels, dtype=np.float64, eps=1e-5, momentum=0.1):
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            mean=np.zeros(channels, dtype=dtype),
            var=np.ones(channels, dtype=dtype),
            eps=eps,
            momentum=momentum,
        )


def bn_forward(x, gamma, beta, state: BNState, train):
    """Batch-norm core shared by the raw op and the autodiff op.

    Returns (out, x_hat, inv_std). Train mode normalizes with biased batch
    statistics and updates running stats with unbiased variance (momentum
    m: running <- (1-m)*running + m*batch).
    """
    if x.shape[1] != state.mean.shape[0]:
        raise ShapeError(
            f"batch_norm channel mismatch: input {x.shape} vs state "
            f"({state.mean.shape[0]} channels)"
        )
    if train:
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        n = x.shape[0] * x.shape[2] * x.shape[3]
        var_unbiased = var * (n / (n - 1)) if n > 1 else var
        m = state.momentum
        state.mean[:] = (1 - m) * state.mean + m * mu
        state.var[:] = (1 - m) * state.var + m * var_unbiased
    else:
        mu = state.mean
        var = state.var
    inv_std = 1.0 / np.sqrt(var + np.asarray(state.eps, dtype=x.dtype))
    x_hat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = x_hat * gamma[None, :, None, None] + beta[None, :, None, None]
    return out, x_hat, inv_std


def batch_norm(x, state: BNState, train=False):
    """Per-channel normalization (x - mu) / sqrt(var + eps) * gamma + beta."""
    out, _, _ = bn_forward(x, state.gamma, state.beta, state, train)
    return out


def _bilinear_taps(n_in, dtype):
    # Source taps for 2x upsampling, align_corners=False convention:
    # output i samples input coordinate (i + 0.5)/2 - 0.5, clamped.
    src = (np.arange(2 * n_in, dtype=np.float64) + 0.5) / 2.0 - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = (src - i0).astype(dtype)
    w0 = (np.ones_like(src) - (src - i0)).astype(dtype)
    return i0, i1, w0, w1


def upsample2x(x):
    """Bilinear 2x upsampling (align_corners=False)."""
    if x.ndim != 4:
        raise ShapeError(f"upsample2x input must be rank 4, got shape {x.shape}")
    h, w = x.shape[2], x.shape[3]
    return backend.upsample2x(x, _bilinear_taps(h, x.dtype), _bilinear_taps(w, x.dtype))


def upsample2x_adjoint(g):
    """Exact adjoint of `upsample2x`; maps (n,c,2h,2w) back to (n,c,h,w)."""
    h2, w2 = g.shape[2], g.shape[3]
    taps_h = _bilinear_taps(h2 // 2, g.dtype)
    taps_w = _bilinear_taps(w2 // 2, g.dtype)
    return backend.upsample2x_adjoint(g, taps_h, taps_w)


def concat_channels(a, b):
    """Stack two tensors along the channel axis, a first."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels spatial mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_channels(x, c_first):
    """Inverse of concat_channels: split after c_first channels."""
    return x[:, :c_first], x[:, c_first:]


def softmax_channels(x):
    """Numerically stable softmax over the channel axis."""
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_channels(x):
    """Numerically stable log-softmax over the channel axis."""
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def tensor_inner(a, b):
    """Flat inner product <a, b>."""
    return float(np.dot(a.reshape(-1), b.reshape(-1)))
