"""Encoder-decoder segmentation network.

The decoder is the point of the package: each stage upsamples 2x,
applies a 3x3 conv, concatenates the matching encoder skip, and runs the
sparse coding block from `sparse_block`. The encoder sits behind a small
interface so a different backbone can be plugged in without touching the
decoder; the default is a compact 4-stage conv encoder.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import ops, tensor_io
from .autodiff import Param
from .errors import ShapeError
from .rng import Stream
from .sparse_block import SparseBlockParams, init_sparse_block, sparse_forward

DTYPE_NAMES = {"f32": np.float32, "f64": np.float64}


def _kaiming(stream, shape, dtype):
    fan_in = shape[1] * shape[2] * shape[3]
    bound = np.sqrt(6.0 / fan_in)
    return stream.uniform(shape, -bound, bound).astype(dtype)


@dataclass
class ConvBlockParams:
    """conv3x3 (optionally strided) -> batch norm -> relu."""

    w: Param
    bn: ops.BNState
    bn_gamma: Param
    bn_beta: Param
    stride: int = 1

    def params(self):
        return [self.w, self.bn_gamma, self.bn_beta]


def init_conv_block(name, c_in, c_out, stride, stream, dtype):
    bn = ops.BNState.create(c_out, dtype=dtype)
    return ConvBlockParams(
        w=Param(f"{name}.w", _kaiming(stream, (c_out, c_in, 3, 3), dtype)),
        bn=bn,
        bn_gamma=Param(f"{name}.bn.gamma", bn.gamma),
        bn_beta=Param(f"{name}.bn.beta", bn.beta),
        stride=stride,
    )


def conv_bn_relu(x, blk: ConvBlockParams, train, tape):
    w = tape.param(blk.w) if tape is not None else blk.w.value
    g = tape.param(blk.bn_gamma) if tape is not None else blk.bn_gamma.value
    b = tape.param(blk.bn_beta) if tape is not None else blk.bn_beta.value
    y = ad.conv2d(x, w, blk.stride, 1)
    y = ad.batch_norm(y, g, b, blk.bn, train)
    return ad.relu(y)


@dataclass
class EncoderOutput:
    """Skip features ordered shallow to deep (1x, 2x, 4x) plus bottleneck (8x)."""

    skips: list
    bottleneck: object


class Encoder:
    """Minimal encoder interface the decoder builds against."""

    skip_channels: tuple
    out_channels: int

    def forward(self, x, train=False, tape=None) -> EncoderOutput:
        raise NotImplementedError

    def params(self):
        raise NotImplementedError

    def bn_states(self):
        return []


class ConvEncoder(Encoder):
    """Four stages of (conv3x3-BN-ReLU x2), 2x strided-conv downsampling."""

    def __init__(self, in_channels, widths, stream, dtype):
        self.widths = tuple(widths)
        self.skip_channels = self.widths[:3]
        self.out_channels = self.widths[3]
        self.stages = []
        self.downs = []
        c_prev = in_channels
        for i, c in enumerate(self.widths):
            blocks = [
                init_conv_block(f"enc{i}.a", c_prev if i == 0 else c, c, 1, stream, dtype),
                init_conv_block(f"enc{i}.b", c, c, 1, stream, dtype),
            ]
            self.stages.append(blocks)
            if i < 3:
                self.downs.append(
                    init_conv_block(f"down{i}", c, self.widths[i + 1], 2, stream, dtype)
                )
            c_prev = c

    def forward(self, x, train=False, tape=None):
        h, w = ad._value(x).shape[2:]
        if h % 8 or w % 8:
            raise ShapeError(
                f"encoder input size {h}x{w} must be divisible by 8"
            )
        skips = []
        cur = x
        for i, blocks in enumerate(self.stages):
            for blk in blocks:
                cur = conv_bn_relu(cur, blk, train, tape)
            if i < 3:
                skips.append(cur)
                cur = conv_bn_relu(cur, self.downs[i], train, tape)
        return EncoderOutput(skips=skips, bottleneck=cur)

    def params(self):
        out = []
        for blocks in self.stages:
            for blk in blocks:
                out.extend(blk.params())
        for blk in self.downs:
            out.extend(blk.params())
        return out

    def bn_states(self):
        out = []
        for i, blocks in enumerate(self.stages):
            for tag, blk in zip("ab", blocks):
                out.append((f"enc{i}.{tag}.bn", blk.bn))
        for i, blk in enumerate(self.downs):
            out.append((f"down{i}.bn", blk.bn))
        return out


@dataclass
class DecoderStage:
    up_w: Param
    block: SparseBlockParams

    def params(self):
        return [self.up_w] + self.block.params()


class SegNet:
    """Encoder + sparse-coding decoder + 1x1 segmentation head.

    widths are the encoder stage channels; decoder stage output channels
    mirror the matching skip (deep to shallow). Iteration counts are per
    decoder stage, deep to shallow.
    """

    def __init__(self, in_channels=1, n_classes=4, widths=(16, 32, 64, 128),
                 iterations=(2, 2, 2), ksize=3, seed=0, dtype=np.float64,
                 encoder=None):
        if len(widths) != 4:
            raise ShapeError(f"widths must have 4 entries, got {widths}")
        if len(iterations) != 3:
            raise ShapeError(f"iterations must have 3 entries, got {iterations}")
        self.in_channels = in_channels
        self.n_classes = n_classes
        self.widths = tuple(int(v) for v in widths)
        self.iterations = tuple(int(t) for t in iterations)
        self.ksize = ksize
        self.seed = seed
        self.dtype = np.dtype(dtype)
        stream = Stream(seed, "init")
        self.encoder = encoder if encoder is not None else ConvEncoder(
            in_channels, self.widths, stream, self.dtype
        )
        # Stage i consumes the previous decoder output (or bottleneck) and
        # the skip at the same resolution; output channels equal the skip's.
        self.stages = []
        c_prev = self.encoder.out_channels
        for i, skip_c in enumerate(reversed(self.encoder.skip_channels)):
            up_w = Param(f"dec{i}.up.w", _kaiming(stream, (skip_c, c_prev, 3, 3), self.dtype))
            block = init_sparse_block(
                f"dec{i}.block", c_in=2 * skip_c, d1=skip_c, d2=skip_c,
                ksize=ksize, stride=1, padding=ksize // 2,
                iterations=self.iterations[i], stream=stream, dtype=self.dtype,
            )
            self.stages.append(DecoderStage(up_w=up_w, block=block))
            c_prev = skip_c
        # Zero-init head: initial logits are uniform, so early training is
        # a well-conditioned linear readout of the (batch-normed) features.
        self.head_w = Param("head.w", np.zeros((n_classes, c_prev, 1, 1), dtype=self.dtype))
        self.head_b = Param("head.b", np.zeros(n_classes, dtype=self.dtype))

    # -- forward ---------------------------------------------------------

    def forward(self, x, train=False, tape=None, stage_codes=None, traces=None):
        """Logits of shape (n, n_classes, h, w).

        stage_codes, when a list, receives each stage's final deep code
        (raw arrays). traces, when a dict {stage_index: BlockTrace}, has
        those stages' refinement diagnostics recorded.
        """
        enc = self.encoder.forward(x, train=train, tape=tape)
        cur = enc.bottleneck
        for i, stage in enumerate(self.stages):
            skip = enc.skips[len(enc.skips) - 1 - i]
            up_w = tape.param(stage.up_w) if tape is not None else stage.up_w.value
            cur = ad.upsample2x(cur)
            cur = ad.conv2d(cur, up_w, 1, 1)
            cur = ad.concat_channels(cur, skip)
            trace = traces.get(i) if traces is not None else None
            cur = sparse_forward(cur, stage.block, train=train, tape=tape, trace=trace)
            if stage_codes is not None:
                stage_codes.append(ad._value(cur))
        head_w = tape.param(self.head_w) if tape is not None else self.head_w.value
        head_b = tape.param(self.head_b) if tape is not None else self.head_b.value
        logits = ad.conv2d(cur, head_w, 1, 0)
        return ad.add(logits, ad.reshape(head_b, (1, self.n_classes, 1, 1)))

    def predict(self, x):
        """Integer mask via per-pixel argmax; ties go to the lower class."""
        logits = self.forward(x, train=False)
        return np.argmax(logits, axis=1)

    # -- parameter plumbing ------------------------------------------------

    def params(self):
        out = list(self.encoder.params())
        for stage in self.stages:
            out.extend(stage.params())
        out.append(self.head_w)
        out.append(self.head_b)
        return out

    def param_count(self):
        return int(sum(p.value.size for p in self.params()))

    def bn_states(self):
        out = list(self.encoder.bn_states())
        for i, stage in enumerate(self.stages):
            out.append((f"dec{i}.block.bn1", stage.block.bn1))
            out.append((f"dec{i}.block.bn2", stage.block.bn2))
        return out

    def named_arrays(self):
        arrays = {p.name: p.value for p in self.params()}
        for name, bn in self.bn_states():
            arrays[f"{name}.mean"] = bn.mean
            arrays[f"{name}.var"] = bn.var
        return arrays

    def config(self):
        return {
            "in_channels": self.in_channels,
            "n_classes": self.n_classes,
            "widths": list(self.widths),
            "iterations": list(self.iterations),
            "ksize": self.ksize,
            "seed": self.seed,
            "dtype": "f32" if self.dtype == np.float32 else "f64",
        }

    # -- checkpointing -----------------------------------------------------

    def save(self, path):
        tensor_io.write_archive(path, self.config(), self.named_arrays())

    @classmethod
    def load(cls, path):
        config, tensors = tensor_io.read_archive(path)
        net = cls(
            in_channels=config["in_channels"],
            n_classes=config["n_classes"],
            widths=config["widths"],
            iterations=config["iterations"],
            ksize=config["ksize"],
            seed=config["seed"],
            dtype=DTYPE_NAMES[config["dtype"]],
        )
        own = net.named_arrays()
        if set(own) != set(tensors):
            missing = set(own).symmetric_difference(tensors)
            raise ShapeError(f"checkpoint tensor names do not match model: {missing}")
        for name, arr in tensors.items():
            if own[name].shape != arr.shape:
                raise ShapeError(
                    f"checkpoint tensor {name} has shape {arr.shape}, "
                    f"expected {own[name].shape}"
                )
            own[name][...] = arr
        return net
