"""WGAN training with the full search-space feature set.

One generator update follows n_critic critic updates. The critic minimizes
mean c(fake) - mean c(real) (+ gradient penalty on per-pair interpolates when
configured); spectral normalization instead rescales every critic weight by
its power-iterated top singular value before each forward. Fresh data is drawn
from the dataset handle at every step.

At every evaluation point both Wasserstein estimates are recorded against the
same batches: the direct pooled-CDF estimate (the reporting metric) and the
signed critic estimate (a training diagnostic that is deliberately never
clamped at zero). The returned model is the best checkpoint by direct W1.

Generator batch norm uses batch statistics whenever fakes are produced during
training (running stats update only on generator updates) and running
statistics at evaluation time.
"""

import math
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import _kernels
from .diffnet import tape as T
from .diffnet.net import DenseNet, DenseNetConfig, init_dense_net
from .diffnet.optim import AdamConfig, AdamState, adam_step, DivergenceError
from .metrics import w1_direct, w1_critic
from .records import TrialRecord
from .rng import make_rng, rng_state, restore_rng

_EVAL_CHUNK = 32_768


@dataclass(frozen=True)
class WganConfig:
    prior: str = "gaussian"             # gaussian | uniform(-1,1)
    prior_dim: int = 2
    width: int = 64
    depth: int = 3
    activation: str = "leaky_relu"
    init_scheme: str = "xavier"
    lipschitz: str = "spectral_norm"    # spectral_norm | gradient_penalty
    gp_weight: float = 10.0
    n_critic: int = 5
    batch_size: int = 256
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    weight_decay: float = 0.0
    cyclic: tuple = None                # (base_lr, max_lr, period) or None
    dropout: float = 0.0
    batch_norm: bool = False            # generator only
    residual: bool = False
    total_generator_steps: int = 20_000
    eval_every: int = 500
    eval_samples: int = 100_000

    def __post_init__(self):
        if self.prior not in ("gaussian", "uniform"):
            raise ValueError(f"unknown prior {self.prior!r}")
        if self.lipschitz not in ("spectral_norm", "gradient_penalty"):
            raise ValueError(f"unknown lipschitz mechanism {self.lipschitz!r}")
        if self.lipschitz == "gradient_penalty" and self.gp_weight <= 0.0:
            raise ValueError("gradient penalty needs gp_weight > 0")
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")
        if self.prior_dim < 1 or self.batch_size < 1:
            raise ValueError("prior_dim and batch_size must be positive")
        if self.cyclic is not None:
            object.__setattr__(self, "cyclic", tuple(self.cyclic))

    def generator_config(self):
        return DenseNetConfig(
            in_dim=self.prior_dim, width=self.width, depth=self.depth,
            activation=self.activation, out_dim=1, residual=self.residual,
            dropout=self.dropout, batch_norm=self.batch_norm)

    def critic_config(self):
        return DenseNetConfig(
            in_dim=1, width=self.width, depth=self.depth,
            activation=self.activation, out_dim=1, residual=self.residual,
            dropout=self.dropout,
            spectral_norm=self.lipschitz == "spectral_norm")

    def adam_config(self):
        return AdamConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                          weight_decay=self.weight_decay, cyclic=self.cyclic)

    def to_dict(self):
        d = asdict(self)
        d["cyclic"] = list(self.cyclic) if self.cyclic else None
        return d

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if doc.get("cyclic"):
            doc["cyclic"] = tuple(doc["cyclic"])
        return cls(**doc)


class TrainState:
    """Everything a run needs to continue: nets, optimizers, streams, history."""

    def __init__(self, config, generator, critic, gen_opt, critic_opt, noise_rng,
                 eval_rng, seed):
        self.config = config
        self.generator = generator
        self.critic = critic
        self.gen_opt = gen_opt
        self.critic_opt = critic_opt
        self.noise_rng = noise_rng
        self.eval_rng = eval_rng
        self.seed = seed
        self.gen_steps = 0
        self.history = []
        self.best_w1 = None
        self.best_generator = None
        self.best_critic = None
        self.last_critic_loss = None
        self.last_gen_loss = None

    @classmethod
    def fresh(cls, config, seed):
        generator = init_dense_net(config.generator_config(), config.init_scheme,
                                   (seed, 0))
        critic = init_dense_net(config.critic_config(), config.init_scheme,
                                (seed, 1))
        return cls(config, generator, critic,
                   AdamState(config.adam_config()), AdamState(config.adam_config()),
                   make_rng(seed, 2), make_rng(seed, 3), seed)

    # -- prior / sampling ----------------------------------------------------

    def draw_prior(self, n, rng):
        u = rng.random((n, self.config.prior_dim))
        if self.config.prior == "gaussian":
            return np.asarray(_kernels.probit(np.maximum(u, 1e-300)))
        return 2.0 * u - 1.0

    def sample_generator(self, n, rng, mode="eval"):
        """n generator outputs, chunked; eval mode by default."""
        out = np.empty(n)
        done = 0
        while done < n:
            m = min(_EVAL_CHUNK, n - done)
            z = self.draw_prior(m, rng)
            out[done:done + m] = self.generator.forward_np(
                z, mode=mode, rng=rng if mode == "train" else None)[:, 0]
            done += m
        return out

    def critic_fn(self, refresh_sn=False):
        """Plain function x -> c(x) for metric evaluation (eval mode)."""
        if refresh_sn:
            self.critic.power_iterate(50)

        def critic(xs):
            xs = np.asarray(xs, dtype=np.float64).reshape(-1, 1)
            return self.critic.forward_np(xs, mode="eval")[:, 0]

        return critic

    # -- checkpointing -------------------------------------------------------

    def to_doc(self):
        return {
            "schema_version": 1,
            "kind": "wgan",
            "config": self.config.to_dict(),
            "seed": self.seed,
            "gen_steps": self.gen_steps,
            "generator": self.generator.to_doc(),
            "critic": self.critic.to_doc(),
            "gen_opt": self.gen_opt.to_doc(),
            "critic_opt": self.critic_opt.to_doc(),
            "noise_rng": rng_state(self.noise_rng),
            "eval_rng": rng_state(self.eval_rng),
            "history": self.history,
            "best_w1": self.best_w1,
            "best_generator": self.best_generator.to_doc() if self.best_generator else None,
            "best_critic": self.best_critic.to_doc() if self.best_critic else None,
            "last_critic_loss": self.last_critic_loss,
            "last_gen_loss": self.last_gen_loss,
        }

    @classmethod
    def from_doc(cls, doc):
        config = WganConfig.from_dict(doc["config"])
        state = cls(config,
                    DenseNet.from_doc(doc["generator"]),
                    DenseNet.from_doc(doc["critic"]),
                    AdamState.from_doc(doc["gen_opt"]),
                    AdamState.from_doc(doc["critic_opt"]),
                    restore_rng(doc["noise_rng"]),
                    restore_rng(doc["eval_rng"]),
                    doc["seed"])
        state.gen_steps = doc["gen_steps"]
        state.history = doc["history"]
        state.best_w1 = doc["best_w1"]
        if doc["best_generator"]:
            state.best_generator = DenseNet.from_doc(doc["best_generator"])
        if doc["best_critic"]:
            state.best_critic = DenseNet.from_doc(doc["best_critic"])
        state.last_critic_loss = doc["last_critic_loss"]
        state.last_gen_loss = doc["last_gen_loss"]
        return state


# -- updates -------------------------------------------------------------


def critic_update(state, real_batch, config):
    """One critic step on a fresh real batch; returns the critic loss."""
    real = np.asarray(real_batch, dtype=np.float64).reshape(-1, 1)
    if real.size == 0:
        raise ValueError("empty batch")
    batch = real.shape[0]
    rng = state.noise_rng

    if config.lipschitz == "spectral_norm":
        state.critic.power_iterate(1)

    z = state.draw_prior(batch, rng)
    fake = state.generator.forward_np(z, mode="train",
                                      rng=rng if config.dropout > 0 else None)

    tp = T.Tape()
    c_real, leaves, _ = state.critic.forward_tape(tp, real, mode="train", rng=rng)
    c_fake, _, _ = state.critic.forward_tape(tp, fake, mode="train", rng=rng,
                                             leaves=leaves)
    loss = T.sub(T.reduce_mean(c_fake), T.reduce_mean(c_real))
    if config.lipschitz == "gradient_penalty":
        eps = rng.random((batch, 1))
        xhat = eps * real + (1.0 - eps) * fake
        _, _, gin = state.critic.forward_tape(tp, xhat, mode="train", rng=rng,
                                              leaves=leaves, input_grad=True)
        gnorm = T.sqrt(T.reduce_sum(T.square(gin), axis=1))
        penalty = T.reduce_mean(T.square(T.sub(gnorm, tp.constant(1.0))))
        loss = T.add(loss, T.mul(tp.constant(config.gp_weight), penalty))

    loss_val = float(loss.value)
    if not math.isfinite(loss_val):
        raise DivergenceError(state.critic_opt.step + 1, what="critic loss")
    T.backward(tp, loss)
    grads = {name: tp.grad(leaf) for name, leaf in leaves.items()}
    adam_step(state.critic_opt, state.critic.params, grads)
    state.last_critic_loss = loss_val
    return loss_val


def generator_update(state, config):
    """One generator step against the current critic; returns the generator loss."""
    rng = state.noise_rng
    z = state.draw_prior(config.batch_size, rng)
    tp = T.Tape()
    fake, gen_leaves, _ = state.generator.forward_tape(
        tp, z, mode="train", rng=rng, update_stats=True)
    c_fake, _, _ = state.critic.forward_tape(tp, fake, mode="train", rng=rng)
    loss = T.neg(T.reduce_mean(c_fake))
    loss_val = float(loss.value)
    if not math.isfinite(loss_val):
        raise DivergenceError(state.gen_opt.step + 1, what="generator loss")
    T.backward(tp, loss)
    grads = {name: tp.grad(leaf) for name, leaf in gen_leaves.items()}
    adam_step(state.gen_opt, state.generator.params, grads)
    state.gen_steps += 1
    state.last_gen_loss = loss_val
    return loss_val


def evaluate(state, data, config):
    """Record both W1 estimates on fresh eval batches; track the best checkpoint."""
    gen = state.sample_generator(config.eval_samples, state.eval_rng)
    if not np.all(np.isfinite(gen)):
        raise DivergenceError(state.gen_steps, what="generator samples")
    real = data.sample(config.eval_samples)
    true_w1 = w1_direct(gen, real)
    critic_w1 = w1_critic(state.critic_fn(refresh_sn=True), real, gen)
    state.history.append({
        "step": state.gen_steps,
        "true_w1": true_w1,
        "critic_w1": critic_w1,
        "critic_loss": state.last_critic_loss,
        "gen_loss": state.last_gen_loss,
    })
    if state.best_w1 is None or true_w1 < state.best_w1:
        state.best_w1 = true_w1
        state.best_generator = state.generator.clone()
        state.best_critic = state.critic.clone()
    return true_w1


def train(config, data, seed=0, state=None, target_steps=None):
    """Run (or continue) a WGAN trial; returns (state, record).

    `state` resumes a checkpointed run; `target_steps` overrides the config's
    total generator steps (used by the budgeted search).
    """
    t0 = time.time()
    if state is None:
        state = TrainState.fresh(config, seed)
    total = config.total_generator_steps if target_steps is None else target_steps
    failure = None
    try:
        if state.gen_steps == 0 and not state.history:
            evaluate(state, data, config)
        while state.gen_steps < total:
            for _ in range(config.n_critic):
                critic_update(state, data.sample(config.batch_size), config)
            generator_update(state, config)
            if state.gen_steps % config.eval_every == 0 or state.gen_steps == total:
                evaluate(state, data, config)
    except DivergenceError as exc:
        failure = str(exc)

    final_w1 = state.history[-1]["true_w1"] if state.history else None
    record = TrialRecord(
        kind="wgan", config=config.to_dict(), seed=state.seed,
        history=list(state.history), best_w1=state.best_w1, final_w1=final_w1,
        failure=failure, wall_clock=time.time() - t0,
    )
    return state, record
