"""Small dense networks with the knobs the WGAN search explores.

A DenseNet is a stack of affine+activation hidden layers (optionally grouped
into residual pairs) and a linear head. Optional per-layer features: batch
normalization (generator side), inverted dropout, and spectral normalization
of the weights (critic side, power-iteration estimate of the top singular
value).

Two forward paths exist and must agree: `forward_np` (plain numpy, used for
bulk sampling/eval) and `forward_tape` (records autodiff nodes). The taped
path can additionally emit the per-sample input gradient as tape nodes, built
by composing the layer Jacobians; differentiating a function of that gradient
(e.g. a gradient penalty) then needs only the ordinary single reverse replay.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tape as T

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "identity")
LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.9
SN_SIGMA_FLOOR = 1e-12


class UnsupportedActivationError(ValueError):
    pass


@dataclass(frozen=True)
class DenseNetConfig:
    in_dim: int
    width: int
    depth: int                     # hidden layer count, >= 1
    activation: str = "leaky_relu"
    out_dim: int = 1
    residual: bool = False
    dropout: float = 0.0
    batch_norm: bool = False
    spectral_norm: bool = False

    def __post_init__(self):
        if self.depth < 1 or self.width < 1 or self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.batch_norm and self.spectral_norm:
            raise ValueError("batch_norm and spectral_norm are mutually exclusive")

    def layer_dims(self):
        dims = [(self.in_dim, self.width)]
        dims += [(self.width, self.width)] * (self.depth - 1)
        dims.append((self.width, self.out_dim))
        return dims


def _act_np(tag, z):
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "leaky_relu":
        return np.where(z > 0.0, z, LEAKY_SLOPE * z)
    if tag == "tanh":
        return np.tanh(z)
    return z


def power_iteration(weight, u, v, iters):
    """Update (u, v) in place toward the top singular pair; return sigma estimate.

    After at least one iteration the estimate u@W@v is nonnegative.
    """
    for _ in range(iters):
        wu = weight.T @ u
        nv = np.linalg.norm(wu)
        if nv > 0.0:
            v[:] = wu / nv
        wv = weight @ v
        nu = np.linalg.norm(wv)
        if nu > 0.0:
            u[:] = wv / nu
    return float(u @ weight @ v)


def spectral_normalize(weight, state, iters=1):
    """Divide `weight` by its power-iterated top singular value.

    `state` is a (u, v) pair of persistent direction vectors; they are updated
    in place so one iteration per training step stays accurate (warm start).
    A zero matrix comes back unchanged (sigma floored at 1e-12).
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    u, v = state
    sigma = power_iteration(weight, u, v, iters)
    return weight / (sigma + SN_SIGMA_FLOOR)


class DenseNet:
    """Parameter container plus the forward implementations."""

    def __init__(self, config, params, buffers):
        self.config = config
        self.params = params      # name -> ndarray, insertion-ordered
        self.buffers = buffers    # sn_u*/sn_v*, bn_mean*/bn_var*

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, config, init_weight):
        params = {}
        buffers = {}
        dims = config.layer_dims()
        for i, (fan_in, fan_out) in enumerate(dims):
            name = f"W{i}"
            params[name] = init_weight(fan_in, fan_out)
            params[f"b{i}"] = np.zeros(fan_out)
            if config.spectral_norm:
                buffers[f"sn_u{i}"] = np.full(fan_in, 1.0 / math.sqrt(fan_in))
                buffers[f"sn_v{i}"] = np.full(fan_out, 1.0 / math.sqrt(fan_out))
            if config.batch_norm and i < len(dims) - 1:
                params[f"bn_g{i}"] = np.ones(fan_out)
                params[f"bn_b{i}"] = np.zeros(fan_out)
                buffers[f"bn_mean{i}"] = np.zeros(fan_out)
                buffers[f"bn_var{i}"] = np.ones(fan_out)
        return cls(config, params, buffers)

    def clone(self):
        return DenseNet(self.config,
                        {k: v.copy() for k, v in self.params.items()},
                        {k: v.copy() for k, v in self.buffers.items()})

    # -- spectral norm -----------------------------------------------------

    def power_iterate(self, iters=1):
        """Refresh all spectral-norm direction vectors; no-op without the flag."""
        if not self.config.spectral_norm:
            return
        for i in range(self.config.depth + 1):
            power_iteration(self.params[f"W{i}"],
                            self.buffers[f"sn_u{i}"], self.buffers[f"sn_v{i}"], iters)

    def effective_weight(self, i):
        """Weight as used by the forward pass (spectral-normalized if enabled)."""
        w = self.params[f"W{i}"]
        if not self.config.spectral_norm:
            return w
        u, v = self.buffers[f"sn_u{i}"], self.buffers[f"sn_v{i}"]
        return w / (float(u @ w @ v) + SN_SIGMA_FLOOR)

    # -- structure ---------------------------------------------------------

    def _plan(self):
        """Segment list: ('layer', i) and ('resblock', i, i+1) over hidden layers."""
        cfg = self.config
        segs = [("layer", 0)]
        i = 1
        while i < cfg.depth:
            if cfg.residual and i + 1 < cfg.depth:
                segs.append(("resblock", i, i + 1))
                i += 2
            else:
                segs.append(("layer", i))
                i += 1
        return segs

    # -- numpy forward -----------------------------------------------------

    def forward_np(self, x, mode="eval", rng=None, update_stats=False, trace=None):
        """Plain-numpy forward pass. x: (batch, in_dim). Returns (batch, out_dim).

        `trace`, if a list, collects each hidden layer's pre-activation array
        (after batch norm), in order.
        """
        cfg = self.config
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != cfg.in_dim:
            raise ValueError(f"expected input (batch, {cfg.in_dim}), got {x.shape}")
        if mode not in ("train", "eval"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "train" and cfg.dropout > 0.0 and rng is None:
            raise ValueError("train-mode dropout needs an rng")

        h = x
        for seg in self._plan():
            if seg[0] == "layer":
                h = self._layer_np(seg[1], h, mode, rng, update_stats, trace)
            else:
                inner = self._layer_np(seg[1], h, mode, rng, update_stats, trace)
                inner = self._layer_np(seg[2], inner, mode, rng, update_stats, trace)
                h = h + inner
        return h @ self.effective_weight(cfg.depth) + self.params[f"b{cfg.depth}"]

    def _layer_np(self, i, h, mode, rng, update_stats, trace=None):
        cfg = self.config
        z = h @ self.effective_weight(i) + self.params[f"b{i}"]
        if cfg.batch_norm:
            z = self._bn_np(i, z, mode, update_stats)
        if trace is not None:
            trace.append(z)
        a = _act_np(cfg.activation, z)
        if cfg.dropout > 0.0 and mode == "train":
            keep = 1.0 - cfg.dropout
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        return a

    def _bn_np(self, i, z, mode, update_stats):
        if mode == "train":
            m = z.mean(axis=0)
            v = z.var(axis=0)
            if update_stats:
                self.buffers[f"bn_mean{i}"] *= BN_MOMENTUM
                self.buffers[f"bn_mean{i}"] += (1.0 - BN_MOMENTUM) * m
                self.buffers[f"bn_var{i}"] *= BN_MOMENTUM
                self.buffers[f"bn_var{i}"] += (1.0 - BN_MOMENTUM) * v
        else:
            m = self.buffers[f"bn_mean{i}"]
            v = self.buffers[f"bn_var{i}"]
        zn = (z - m) / np.sqrt(v + BN_EPS)
        return zn * self.params[f"bn_g{i}"] + self.params[f"bn_b{i}"]

    # -- taped forward -----------------------------------------------------

    def forward_tape(self, tp, x, mode="train", rng=None, update_stats=False,
                     input_grad=False, leaves=None):
        """Record the forward pass on tape `tp`.

        Returns (out, leaves, gin): `leaves` maps parameter names to their leaf
        Vars (for gradient lookup after backward), `gin` is the per-sample
        gradient of the scalar output w.r.t. the input, built from tape nodes
        (None unless input_grad=True). Pass an existing `leaves` dict to share
        parameter nodes across several forward passes on one tape (their
        gradients then accumulate in a single backward).
        """
        cfg = self.config
        if input_grad:
            if cfg.out_dim != 1:
                raise ValueError("input gradient needs a scalar output")
            if cfg.batch_norm:
                raise ValueError("input-gradient path does not support batch_norm")
            if cfg.activation not in ("relu", "leaky_relu", "tanh", "identity"):
                raise UnsupportedActivationError(
                    f"activation {cfg.activation!r} lacks a second-order path")
        if mode == "train" and cfg.dropout > 0.0 and rng is None:
            raise ValueError("train-mode dropout needs an rng")

        x = x if isinstance(x, T.Var) else tp.leaf(np.asarray(x, dtype=np.float64))
        if x.value.ndim != 2 or x.value.shape[1] != cfg.in_dim:
            raise ValueError(f"expected input (batch, {cfg.in_dim}), got {x.value.shape}")
        if leaves is None:
            leaves = {name: tp.leaf(val) for name, val in self.params.items()}
        weff = {}
        for i in range(cfg.depth + 1):
            w = leaves[f"W{i}"]
            if cfg.spectral_norm:
                u = self.buffers[f"sn_u{i}"]
                v = self.buffers[f"sn_v{i}"]
                sigma = T.matmul(T.matmul(tp.constant(u[None, :]), w),
                                 tp.constant(v[:, None]))  # (1,1)
                floor = tp.constant(np.full((1, 1), SN_SIGMA_FLOOR))
                w = T.div(w, T.add(sigma, floor))
            weff[i] = w

        records = []   # mirrors self._plan() for the input-gradient walk
        h = x
        for seg in self._plan():
            if seg[0] == "layer":
                h, rec = self._layer_tape(tp, seg[1], h, weff, leaves, mode, rng,
                                          update_stats)
                records.append(("layer", rec))
            else:
                h_in = h
                a, rec1 = self._layer_tape(tp, seg[1], h, weff, leaves, mode, rng,
                                           update_stats)
                b, rec2 = self._layer_tape(tp, seg[2], a, weff, leaves, mode, rng,
                                           update_stats)
                h = T.add(h_in, b)
                records.append(("resblock", rec1, rec2))
        out = T.add(T.matmul(h, weff[cfg.depth]), leaves[f"b{cfg.depth}"])

        gin = None
        if input_grad:
            gin = self._input_grad_nodes(tp, x, out, weff, records)
        return out, leaves, gin

    def _layer_tape(self, tp, i, h, weff, leaves, mode, rng, update_stats):
        cfg = self.config
        z = T.add(T.matmul(h, weff[i]), leaves[f"b{i}"])
        if cfg.batch_norm:
            z = self._bn_tape(tp, i, z, leaves, mode, update_stats)
        tag = cfg.activation
        if tag == "relu":
            act_out = T.relu(z)
        elif tag == "leaky_relu":
            act_out = T.leaky_relu(z, LEAKY_SLOPE)
        elif tag == "tanh":
            act_out = T.tanh(z)
        else:
            act_out = z
        mask = None
        a = act_out
        if cfg.dropout > 0.0 and mode == "train":
            keep = 1.0 - cfg.dropout
            mask = tp.constant((rng.random(act_out.value.shape) < keep) / keep)
            a = T.mul(act_out, mask)
        return a, (weff[i], z, act_out, mask)

    def _bn_tape(self, tp, i, z, leaves, mode, update_stats):
        if mode == "train":
            m = T.reduce_mean(z, axis=0, keepdims=True)
            centered = T.sub(z, m)
            v = T.reduce_mean(T.square(centered), axis=0, keepdims=True)
            if update_stats:
                self.buffers[f"bn_mean{i}"] *= BN_MOMENTUM
                self.buffers[f"bn_mean{i}"] += (1.0 - BN_MOMENTUM) * m.value[0]
                self.buffers[f"bn_var{i}"] *= BN_MOMENTUM
                self.buffers[f"bn_var{i}"] += (1.0 - BN_MOMENTUM) * v.value[0]
            zn = T.div(centered, T.sqrt(T.add(v, BN_EPS)))
        else:
            m = tp.constant(self.buffers[f"bn_mean{i}"])
            v = tp.constant(self.buffers[f"bn_var{i}"])
            zn = T.div(T.sub(z, m), T.sqrt(T.add(v, BN_EPS)))
        return T.add(T.mul(zn, leaves[f"bn_g{i}"]), leaves[f"bn_b{i}"])

    def _act_deriv_nodes(self, tp, z, act_out):
        tag = self.config.activation
        if tag == "relu":
            return T.relu_mask(z)
        if tag == "leaky_relu":
            return T.leaky_mask(z, LEAKY_SLOPE)
        if tag == "tanh":
            return T.sub(tp.constant(1.0), T.square(act_out))
        return None

    def _backprop_layer(self, tp, g, rec):
        w, z, act_out, mask = rec
        if mask is not None:
            g = T.mul(g, mask)
        deriv = self._act_deriv_nodes(tp, z, act_out)
        if deriv is not None:
            g = T.mul(g, deriv)
        return T.matmul(g, T.transpose(w))

    # -- serialization -------------------------------------------------------

    def to_doc(self):
        from dataclasses import asdict
        return {
            "config": asdict(self.config),
            "params": {k: v.tolist() for k, v in self.params.items()},
            "buffers": {k: v.tolist() for k, v in self.buffers.items()},
        }

    @classmethod
    def from_doc(cls, doc):
        config = DenseNetConfig(**doc["config"])
        params = {k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()}
        buffers = {k: np.asarray(v, dtype=np.float64) for k, v in doc["buffers"].items()}
        return cls(config, params, buffers)

    def _input_grad_nodes(self, tp, x, out, weff, records):
        """d out / d x per sample, expressed as tape nodes."""
        batch = out.value.shape[0]
        ones = tp.constant(np.ones((batch, 1)))
        g = T.matmul(ones, T.transpose(weff[self.config.depth]))
        for item in reversed(records):
            if item[0] == "layer":
                g = self._backprop_layer(tp, g, item[1])
            else:
                inner = self._backprop_layer(tp, g, item[2])
                inner = self._backprop_layer(tp, inner, item[1])
                g = T.add(g, inner)
        return g


def init_dense_net(config, scheme, seed):
    """Fresh DenseNet with 'xavier' or 'uniform' weight init, zero biases.

    `seed` is an int or an (int, *path) tuple selecting a derived stream.
    """
    from ..rng import make_rng
    if scheme not in ("xavier", "uniform"):
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = make_rng(*seed) if isinstance(seed, tuple) else make_rng(seed)

    def init_weight(fan_in, fan_out):
        if scheme == "xavier":
            bound = math.sqrt(6.0 / (fan_in + fan_out))
        else:
            bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    net = DenseNet.build(config, init_weight)
    net.power_iterate(5)  # sigma estimates must be nonnegative before first use
    return net
