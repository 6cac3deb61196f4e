"""Two-layer convolutional sparse coding block with unrolled refinement.

The block first encodes its input through two conv-BN-ReLU stages,
producing codes `code1` and `code2`, then runs a configurable number of
refinement iterations. Each iteration re-synthesizes the signal from the
deeper code with transposed convolutions, takes a gradient step on the
reconstruction residual at each layer, and re-applies the nonnegative
threshold. More iterations drive the codes sparser; the block returns
the final deep code.

Refinement uses the same kernels as the encoding stage, with the
transposed convolutions being exact adjoints of the forward ones, so the
whole block is trainable end to end through the unrolled loop.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import ops
from .autodiff import Param
from .rng import Stream


@dataclass
class SparseBlockParams:
    """Learnable state of one block.

    k1 maps input channels to d1 code channels, k2 maps d1 to d2. step1
    and step2 are learnable scalar step sizes, bias1/bias2 per-channel
    offsets (the threshold role in the sparse-coding reading). Batch norm
    applies only in the encoding stage, never inside refinement.
    """

    k1: Param
    k2: Param
    step1: Param
    step2: Param
    bias1: Param
    bias2: Param
    bn1: ops.BNState
    bn2: ops.BNState
    bn1_gamma: Param
    bn1_beta: Param
    bn2_gamma: Param
    bn2_beta: Param
    stride: int = 1
    padding: int = 1
    iterations: int = 2

    def params(self):
        return [
            self.k1, self.k2, self.step1, self.step2, self.bias1, self.bias2,
            self.bn1_gamma, self.bn1_beta, self.bn2_gamma, self.bn2_beta,
        ]

    @property
    def c_in(self):
        return self.k1.value.shape[1]


def init_sparse_block(name, c_in, d1, d2, ksize=3, stride=1, padding=1,
                      iterations=2, stream: Stream = None, dtype=np.float64):
    """Kaiming-uniform kernels, unit steps, zero biases, identity BN."""
    if stream is None:
        stream = Stream(0, "sparse-block", name)

    def kaiming(shape):
        fan_in = shape[1] * shape[2] * shape[3]
        bound = np.sqrt(6.0 / fan_in)
        return stream.uniform(shape, -bound, bound).astype(dtype)

    bn1 = ops.BNState.create(d1, dtype=dtype)
    bn2 = ops.BNState.create(d2, dtype=dtype)
    return SparseBlockParams(
        k1=Param(f"{name}.k1", kaiming((d1, c_in, ksize, ksize))),
        k2=Param(f"{name}.k2", kaiming((d2, d1, ksize, ksize))),
        step1=Param(f"{name}.step1", np.asarray(1.0, dtype=dtype)),
        step2=Param(f"{name}.step2", np.asarray(1.0, dtype=dtype)),
        bias1=Param(f"{name}.bias1", np.zeros(d1, dtype=dtype)),
        bias2=Param(f"{name}.bias2", np.zeros(d2, dtype=dtype)),
        bn1=bn1,
        bn2=bn2,
        bn1_gamma=Param(f"{name}.bn1.gamma", bn1.gamma),
        bn1_beta=Param(f"{name}.bn1.beta", bn1.beta),
        bn2_gamma=Param(f"{name}.bn2.gamma", bn2.gamma),
        bn2_beta=Param(f"{name}.bn2.beta", bn2.beta),
        stride=stride,
        padding=padding,
        iterations=iterations,
    )


def _wrap(p, tape):
    return tape.param(p) if tape is not None else p.value


def _chan(bias_param, channels, tape):
    b = _wrap(bias_param, tape)
    return ad.reshape(b, (1, channels, 1, 1))


def sparse_encode(x, p: SparseBlockParams, train=False, tape=None):
    """Encoding pass: code_l = ReLU(BN(step_l * conv(prev, k_l) + bias_l))."""
    k1 = _wrap(p.k1, tape)
    k2 = _wrap(p.k2, tape)
    d1 = p.k1.value.shape[0]
    d2 = p.k2.value.shape[0]
    z1 = ad.conv2d(x, k1, p.stride, p.padding)
    z1 = ad.add(ad.mul(_wrap(p.step1, tape), z1), _chan(p.bias1, d1, tape))
    z1 = ad.batch_norm(z1, _wrap(p.bn1_gamma, tape), _wrap(p.bn1_beta, tape), p.bn1, train)
    code1 = ad.relu(z1)
    z2 = ad.conv2d(code1, k2, p.stride, p.padding)
    z2 = ad.add(ad.mul(_wrap(p.step2, tape), z2), _chan(p.bias2, d2, tape))
    z2 = ad.batch_norm(z2, _wrap(p.bn2_gamma, tape), _wrap(p.bn2_beta, tape), p.bn2, train)
    code2 = ad.relu(z2)
    return code1, code2


def sparse_refine(code2, x, p: SparseBlockParams, tape=None):
    """One refinement iteration; returns the updated (code1, code2).

    The deep code is first projected back through k2 (overwriting the
    incoming shallow code), each layer takes a residual gradient step at
    the block's configured geometry, and the nonnegative threshold is
    re-applied. No batch norm here.
    """
    k1 = _wrap(p.k1, tape)
    k2 = _wrap(p.k2, tape)
    d1 = p.k1.value.shape[0]
    d2 = p.k2.value.shape[0]
    x_hw = ad._value(x).shape[2:]
    spec1 = ops.ConvSpec(p.k1.value, p.stride, p.padding)
    code1_hw = spec1.out_hw(*x_hw)

    recon1 = ad.conv_transpose2d(code2, k2, p.stride, p.padding, out_hw=code1_hw)
    t1 = ad.sub(ad.conv_transpose2d(recon1, k1, p.stride, p.padding, out_hw=x_hw), x)
    t2 = ad.conv2d(t1, k1, p.stride, p.padding)
    code1 = ad.relu(
        ad.add(ad.sub(recon1, ad.mul(_wrap(p.step1, tape), t2)), _chan(p.bias1, d1, tape))
    )
    t3 = ad.sub(recon1, code1)
    t4 = ad.conv2d(t3, k2, p.stride, p.padding)
    code2 = ad.relu(
        ad.add(ad.sub(code2, ad.mul(_wrap(p.step2, tape), t4)), _chan(p.bias2, d2, tape))
    )
    return code1, code2


@dataclass
class BlockTrace:
    """Per-iteration diagnostics; iteration 0 is the encoding pass."""

    rows: list = field(default_factory=list)

    def append(self, iteration, code1, code2, residual):
        self.rows.append(
            (iteration, sparsity(code1), sparsity(code2), residual)
        )

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iteration", "sparsity_gamma1", "sparsity_gamma2", "residual_norm"])
            for row in self.rows:
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


def _residual_norm(code2_value, x_value, p: SparseBlockParams):
    spec1 = ops.ConvSpec(p.k1.value, p.stride, p.padding)
    spec2 = ops.ConvSpec(p.k2.value, p.stride, p.padding)
    code1_hw = spec1.out_hw(x_value.shape[2], x_value.shape[3])
    back1 = ops.conv_transpose2d(code2_value, spec2, out_hw=code1_hw)
    back0 = ops.conv_transpose2d(back1, spec1, out_hw=x_value.shape[2:])
    return float(np.sqrt(np.sum((back0 - x_value) ** 2)))


def sparse_forward(x, p: SparseBlockParams, train=False, tape=None, trace: BlockTrace = None):
    """Encode then run p.iterations refinements; returns the deep code.

    With iterations == 0 the result is bitwise equal to the encoding
    pass. Passing a trace records sparsity and reconstruction residual
    per iteration without altering any returned value.
    """
    code1, code2 = sparse_encode(x, p, train=train, tape=tape)
    if trace is not None:
        trace.append(0, ad._value(code1), ad._value(code2),
                     _residual_norm(ad._value(code2), ad._value(x), p))
    for it in range(p.iterations):
        code1, code2 = sparse_refine(code2, x, p, tape=tape)
        if trace is not None:
            trace.append(it + 1, ad._value(code1), ad._value(code2),
                         _residual_norm(ad._value(code2), ad._value(x), p))
    return code2


def sparsity(t, tol=0.0):
    """Fraction of entries with |v| <= tol; 1.0 for an all-zero tensor."""
    t = np.asarray(t)
    if t.size == 0:
        return 1.0
    return float(np.count_nonzero(np.abs(t) <= tol)) / t.size


def nonneg_soft_threshold(v, lam):
    """Nonnegative soft-thresholding max(0, v - lam).

    Independent oracle for the encoding stage: with identity kernels,
    unit step, bias = -lam and batch norm bypassed, one encoding layer
    computes exactly this operator.
    """
    if lam < 0:
        raise ValueError(f"threshold must be >= 0, got {lam}")
    return np.maximum(0.0, np.asarray(v) - lam)
