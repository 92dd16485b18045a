"""Reverse-mode autodiff on an explicit tape of batched numpy arrays.

A Tape records primitive operations in execution order; Vars are handles into
it. backward() replays the tape once, in reverse, accumulating vector-Jacobian
products. Tapes are single-shot: a second replay raises TapeConsumedError.

Everything is float64. Primitives cover exactly what the dense networks and
the flow need: elementwise arithmetic and activations, matmul/transpose,
reductions, logsumexp, a clamp, and the probit (whose derivative is
1/phi(z), kept finite by clamping inputs away from {0, 1}).
"""

import numpy as np

from .._kernels import probit as _probit_kernel

_SQRT_2PI = 2.5066282746310005024157652848110452530069867406099


class TapeConsumedError(RuntimeError):
    pass


class Tape:
    """Append-only record of primitive ops; supports one reverse replay."""

    __slots__ = ("_values", "_parents", "_vjps", "_grads", "_consumed")

    def __init__(self):
        self._values = []
        self._parents = []
        self._vjps = []
        self._grads = None
        self._consumed = False

    def __len__(self):
        return len(self._values)

    def _push(self, value, parents=(), vjp=None):
        self._values.append(value)
        self._parents.append(parents)
        self._vjps.append(vjp)
        return Var(self, len(self._values) - 1)

    def leaf(self, value):
        """Record an input/parameter; its gradient is retrievable after backward."""
        return self._push(np.asarray(value, dtype=np.float64))

    def constant(self, value):
        return self._push(np.asarray(value, dtype=np.float64))

    def grad(self, var):
        """Gradient of the replayed scalar w.r.t. `var` (zeros if unreached)."""
        if self._grads is None:
            raise RuntimeError("backward() has not run on this tape")
        g = self._grads[var.idx]
        if g is None:
            return np.zeros_like(self._values[var.idx])
        return g


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape._values[self.idx]

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
        return neg(self)

    def __pow__(self, c):
        return powc(self, c)


def backward(tape, root, seed=1.0):
    """Replay `tape` in reverse from `root`, once; then query tape.grad()."""
    if tape._consumed:
        raise TapeConsumedError("tape already replayed; build a fresh tape")
    tape._consumed = True
    grads = [None] * len(tape._values)
    grads[root.idx] = np.broadcast_to(
        np.asarray(seed, dtype=np.float64), tape._values[root.idx].shape
    ).copy() if np.ndim(tape._values[root.idx]) else np.asarray(seed, dtype=np.float64)
    for i in range(root.idx, -1, -1):
        g = grads[i]
        if g is None or tape._vjps[i] is None:
            continue
        for parent, pg in zip(tape._parents[i], tape._vjps[i](g)):
            if pg is None:
                continue
            if grads[parent] is None:
                grads[parent] = pg
            else:
                grads[parent] = grads[parent] + pg
    tape._grads = grads
    return grads


def _lift(tape, x):
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("vars belong to different tapes")
        return x
    return tape.constant(x)


def _unbroadcast(g, shape):
    """Sum `g` down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, fwd, vjp_a, vjp_b):
    tape = a.tape if isinstance(a, Var) else b.tape
    a = _lift(tape, a)
    b = _lift(tape, b)
    va, vb = a.value, b.value
    out = fwd(va, vb)

    def vjp(g):
        return (_unbroadcast(vjp_a(g, va, vb), va.shape),
                _unbroadcast(vjp_b(g, va, vb), vb.shape))

    return tape._push(out, (a.idx, b.idx), vjp)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary(a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def neg(a):
    return a.tape._push(-a.value, (a.idx,), lambda g: (-g,))


def powc(a, c):
    c = float(c)
    va = a.value
    return a.tape._push(va ** c, (a.idx,), lambda g: (g * c * va ** (c - 1.0),))


def square(a):
    va = a.value
    return a.tape._push(va * va, (a.idx,), lambda g: (2.0 * g * va,))


def sqrt(a):
    out = np.sqrt(a.value)
    return a.tape._push(out, (a.idx,), lambda g: (g * 0.5 / out,))


def absolute(a):
    va = a.value
    return a.tape._push(np.abs(va), (a.idx,), lambda g: (g * np.sign(va),))


def exp(a):
    out = np.exp(a.value)
    return a.tape._push(out, (a.idx,), lambda g: (g * out,))


def log(a):
    va = a.value
    return a.tape._push(np.log(va), (a.idx,), lambda g: (g / va,))


def tanh(a):
    out = np.tanh(a.value)
    return a.tape._push(out, (a.idx,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    va = a.value
    out = np.empty_like(va)
    pos = va >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-va[pos]))
    e = np.exp(va[~pos])
    out[~pos] = e / (1.0 + e)
    return a.tape._push(out, (a.idx,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    va = a.value
    out = np.logaddexp(0.0, va)

    def vjp(g):
        s = np.empty_like(va)
        pos = va >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-va[pos]))
        e = np.exp(va[~pos])
        s[~pos] = e / (1.0 + e)
        return (g * s,)

    return a.tape._push(out, (a.idx,), vjp)


def relu(a):
    va = a.value
    return a.tape._push(np.maximum(va, 0.0), (a.idx,),
                        lambda g: (g * (va > 0.0),))


def leaky_relu(a, slope=0.2):
    va = a.value
    return a.tape._push(np.where(va > 0.0, va, slope * va), (a.idx,),
                        lambda g: (g * np.where(va > 0.0, 1.0, slope),))


def relu_mask(a):
    """Value (a > 0) as floats; gradient does not flow (a.e.-constant)."""
    return a.tape._push((a.value > 0.0).astype(np.float64), (a.idx,),
                        lambda g: (None,))


def leaky_mask(a, slope=0.2):
    """Value 1 where a > 0 else slope; gradient does not flow."""
    return a.tape._push(np.where(a.value > 0.0, 1.0, slope), (a.idx,),
                        lambda g: (None,))


def matmul(a, b):
    tape = a.tape if isinstance(a, Var) else b.tape
    a = _lift(tape, a)
    b = _lift(tape, b)
    va, vb = a.value, b.value

    def vjp(g):
        return (g @ vb.T, va.T @ g)

    return tape._push(va @ vb, (a.idx, b.idx), vjp)


def transpose(a):
    return a.tape._push(a.value.T, (a.idx,), lambda g: (g.T,))


def reshape(a, shape):
    old = a.value.shape
    return a.tape._push(a.value.reshape(shape), (a.idx,),
                        lambda g: (g.reshape(old),))


def reduce_sum(a, axis=None, keepdims=False):
    va = a.value
    out = va.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, va.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, va.shape).copy(),)

    return a.tape._push(out, (a.idx,), vjp)


def reduce_mean(a, axis=None, keepdims=False):
    va = a.value
    out = va.mean(axis=axis, keepdims=keepdims)
    denom = va.size if axis is None else va.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / denom, va.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / denom, va.shape).copy(),)

    return a.tape._push(out, (a.idx,), vjp)


def logsumexp(a, axis=-1):
    va = a.value
    m = np.max(va, axis=axis, keepdims=True)
    ex = np.exp(va - m)
    s = ex.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)

    def vjp(g):
        return (np.expand_dims(g, axis) * ex / s,)

    return a.tape._push(out, (a.idx,), vjp)


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient passes only through the interior."""
    va = a.value
    out = np.clip(va, lo, hi)
    inside = (va > lo) & (va < hi)
    return a.tape._push(out, (a.idx,), lambda g: (g * inside,))


def probit_op(a):
    """Inverse normal CDF node; input must already be clamped into (0, 1)."""
    out = np.asarray(_probit_kernel(a.value))

    def vjp(g):
        return (g * _SQRT_2PI * np.exp(0.5 * out * out),)

    return a.tape._push(out, (a.idx,), vjp)
