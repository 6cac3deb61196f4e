"""Tape-based reverse-mode differentiation over the fixed operator set.

Every differentiable op in this module accepts either a `Var` (tracked on
a tape) or a plain ndarray (constant / untracked). With no `Var` among
the inputs an op simply evaluates the underlying `ops` function, so the
recorded forward value is bitwise identical to the unrecorded one.

Backward walks the tape in exact reverse execution order and accumulates
gradients additively, which is what makes weight sharing correct: a
kernel used both as a convolution and as its own transpose inside one
refinement iteration receives the sum of both contributions.
"""

import numpy as np

from . import backend, ops
from .errors import UsageError


class Param:
    """A named trainable tensor with an accumulated gradient."""

    __slots__ = ("name", "value", "grad", "trainable")

    def __init__(self, name, value, trainable=True):
        self.name = name
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


class Var:
    """A tape-tracked value."""

    __slots__ = ("value", "vid", "tape")

    def __init__(self, value, vid, tape):
        self.value = value
        self.vid = vid
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)


class Tape:
    """Ordered record of one forward pass."""

    def __init__(self):
        self._nodes = []
        self._n_vars = 0
        self._params = {}
        self._last_grads = None

    def _new_var(self, value):
        v = Var(np.asarray(value), self._n_vars, self)
        self._n_vars += 1
        return v

    def leaf(self, value):
        """Track an input tensor so its gradient can be read back."""
        return self._new_var(value)

    def param(self, p: Param):
        """Track a Param; memoized so repeated uses share one leaf."""
        entry = self._params.get(id(p))
        if entry is None:
            entry = (p, self.leaf(p.value))
            self._params[id(p)] = entry
        return entry[1]

    def record(self, value, parents, backward_fn):
        out = self._new_var(value)
        parent_vids = tuple(p.vid if isinstance(p, Var) else None for p in parents)
        self._nodes.append((out.vid, parent_vids, backward_fn))
        return out

    def backward(self, loss: Var):
        """Populate Param.grad (additively) for everything reaching loss."""
        if not self._nodes:
            raise UsageError("backward called before any forward was recorded")
        if not isinstance(loss, Var) or loss.tape is not self:
            raise UsageError("loss node does not belong to this tape")
        if np.asarray(loss.value).size != 1:
            raise UsageError(f"loss must be scalar, got shape {loss.value.shape}")
        grads = {loss.vid: np.ones_like(loss.value)}
        for out_vid, parent_vids, backward_fn in reversed(self._nodes):
            g = grads.pop(out_vid, None)
            if g is None:
                continue
            for vid, pg in zip(parent_vids, backward_fn(g)):
                if vid is None or pg is None:
                    continue
                if vid in grads:
                    grads[vid] = grads[vid] + pg
                else:
                    grads[vid] = pg
        for p, leaf in self._params.values():
            pg = grads.get(leaf.vid)
            if pg is not None:
                p.grad += pg
        self._last_grads = grads
        return grads

    def grad(self, var: Var):
        """Gradient of the last backward() with respect to a leaf Var."""
        if self._last_grads is None:
            raise UsageError("grad requested before backward")
        return self._last_grads.get(var.vid)


def _value(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise UsageError("operands recorded on different tapes")
    return tape


def _unbroadcast(grad, shape):
    # Reduce a broadcasted gradient back to the operand's shape.
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    tape = _tape_of(a, b)
    va, vb = _value(a), _value(b)
    out = va + vb
    if tape is None:
        return out
    sa, sb = va.shape, vb.shape
    return tape.record(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    tape = _tape_of(a, b)
    va, vb = _value(a), _value(b)
    out = va - vb
    if tape is None:
        return out
    sa, sb = va.shape, vb.shape
    return tape.record(
        out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a, b):
    tape = _tape_of(a, b)
    va, vb = _value(a), _value(b)
    out = va * vb
    if tape is None:
        return out
    sa, sb = va.shape, vb.shape
    return tape.record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * vb, sa), _unbroadcast(g * va, sb)),
    )


def div(a, b):
    tape = _tape_of(a, b)
    va, vb = _value(a), _value(b)
    out = va / vb
    if tape is None:
        return out
    sa, sb = va.shape, vb.shape
    return tape.record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / vb, sa),
            _unbroadcast(-g * va / (vb * vb), sb),
        ),
    )


def relu_grad_mask(x):
    """Subgradient mask for relu; relu'(0) := 0."""
    return (x > 0).astype(x.dtype)


def relu(x):
    tape = _tape_of(x)
    vx = _value(x)
    out = ops.relu(vx)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (g * relu_grad_mask(vx),))


def conv2d(x, w, stride=1, padding=0):
    tape = _tape_of(x, w)
    vx, vw = _value(x), _value(w)
    spec = ops.ConvSpec(vw, stride, padding)
    out = ops.conv2d(vx, spec)
    if tape is None:
        return out
    in_h, in_w = vx.shape[2], vx.shape[3]
    k_h, k_w = vw.shape[2], vw.shape[3]

    def backward(g):
        gx = backend.conv2d_input_grad(g, vw, stride, padding, in_h, in_w)
        gw = backend.conv2d_kernel_grad(vx, g, stride, padding, k_h, k_w)
        return gx, gw

    return tape.record(out, (x, w), backward)


def conv_transpose2d(y, w, stride=1, padding=0, out_hw=None):
    tape = _tape_of(y, w)
    vy, vw = _value(y), _value(w)
    spec = ops.ConvSpec(vw, stride, padding)
    out = ops.conv_transpose2d(vy, spec, out_hw)
    if tape is None:
        return out
    k_h, k_w = vw.shape[2], vw.shape[3]

    def backward(g):
        # d/dy of the adjoint is the forward conv; d/dw mirrors the
        # kernel-gradient with the roles of input and cotangent swapped.
        gy = backend.conv2d(g, vw, stride, padding)
        gw = backend.conv2d_kernel_grad(g, vy, stride, padding, k_h, k_w)
        return gy, gw

    return tape.record(out, (y, w), backward)


def batch_norm(x, gamma, beta, state: ops.BNState, train=False):
    tape = _tape_of(x, gamma, beta)
    vx, vg, vb = _value(x), _value(gamma), _value(beta)
    out, x_hat, inv_std = ops.bn_forward(vx, vg, vb, state, train)
    if tape is None:
        return out

    if train:
        n = vx.shape[0] * vx.shape[2] * vx.shape[3]

        def backward(g):
            dbeta = g.sum(axis=(0, 2, 3))
            dgamma = (g * x_hat).sum(axis=(0, 2, 3))
            coeff = (vg * inv_std / n)[None, :, None, None]
            dx = coeff * (
                n * g
                - dbeta[None, :, None, None]
                - x_hat * dgamma[None, :, None, None]
            )
            return dx, dgamma, dbeta

    else:

        def backward(g):
            dbeta = g.sum(axis=(0, 2, 3))
            dgamma = (g * x_hat).sum(axis=(0, 2, 3))
            dx = g * (vg * inv_std)[None, :, None, None]
            return dx, dgamma, dbeta

    return tape.record(out, (x, gamma, beta), backward)


def upsample2x(x):
    tape = _tape_of(x)
    vx = _value(x)
    out = ops.upsample2x(vx)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (ops.upsample2x_adjoint(g),))


def concat_channels(a, b):
    tape = _tape_of(a, b)
    va, vb = _value(a), _value(b)
    out = ops.concat_channels(va, vb)
    if tape is None:
        return out
    c = va.shape[1]
    return tape.record(out, (a, b), lambda g: (g[:, :c], g[:, c:]))


def softmax(x):
    tape = _tape_of(x)
    out = ops.softmax_channels(_value(x))
    if tape is None:
        return out

    def backward(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return tape.record(out, (x,), backward)


def log_softmax(x):
    tape = _tape_of(x)
    vx = _value(x)
    out = ops.log_softmax_channels(vx)
    if tape is None:
        return out

    def backward(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=1, keepdims=True),)

    return tape.record(out, (x,), backward)


def take_channel(x, index_map):
    """Per-pixel channel gather: out[n,h,w] = x[n, index_map[n,h,w], h, w]."""
    tape = _tape_of(x)
    vx = _value(x)
    idx = np.asarray(index_map)
    out = np.take_along_axis(vx, idx[:, None], axis=1)[:, 0]
    if tape is None:
        return out
    shape = vx.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gx, idx[:, None], g[:, None], axis=1)
        return (gx,)

    return tape.record(out, (x,), backward)


def tsum(x, axis=None, keepdims=False):
    tape = _tape_of(x)
    vx = _value(x)
    out = np.asarray(vx.sum(axis=axis, keepdims=keepdims))
    if tape is None:
        return out
    shape = vx.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).astype(g.dtype, copy=True),)

    return tape.record(out, (x,), backward)


def tmean(x, axis=None, keepdims=False):
    vx = _value(x)
    if axis is None:
        count = vx.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= vx.shape[ax]
    return div(tsum(x, axis=axis, keepdims=keepdims), float(count))


def reshape(x, shape):
    tape = _tape_of(x)
    vx = _value(x)
    out = vx.reshape(shape)
    if tape is None:
        return out
    old = vx.shape
    return tape.record(out, (x,), lambda g: (g.reshape(old),))


def finite_diff_check(build_loss, params, n_coords=32, step=1e-5, seed=0):
    """Compare analytic gradients against central finite differences.

    build_loss(tape) must return a scalar Var when given a Tape and the
    same scalar as a plain value when given None. Checks a random
    subsample of at most n_coords coordinates per parameter and returns
    {param_name: max relative error}, with relative error defined as
    |analytic - fd| / (|analytic| + 1e-8).
    """
    from .rng import Stream

    for p in params:
        p.zero_grad()
    tape = Tape()
    loss = build_loss(tape)
    tape.backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}

    report = {}
    stream = Stream(seed, "finite-diff")
    for p in params:
        flat = p.value.reshape(-1)
        aflat = analytic[p.name].reshape(-1)
        k = min(n_coords, flat.size)
        coords = stream.permutation(flat.size)[:k]
        worst = 0.0
        for i in coords:
            saved = flat[i]
            flat[i] = saved + step
            lp = float(np.asarray(_value(build_loss(None))))
            flat[i] = saved - step
            lm = float(np.asarray(_value(build_loss(None))))
            flat[i] = saved
            fd = (lp - lm) / (2.0 * step)
            a = float(aflat[i])
            rel = abs(a - fd) / (abs(a) + 1e-8)
            worst = max(worst, rel)
        report[p.name] = worst
    return report
