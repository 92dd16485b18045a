"""Adam with bias correction, decoupled weight decay, optional triangular
cyclic learning rate, and a hard divergence gate (non-finite gradients abort
the trial instead of silently corrupting it)."""

from dataclasses import dataclass, field

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when a non-finite loss/gradient shows up; carries the step index."""

    def __init__(self, step, what="gradient"):
        super().__init__(f"divergence detected: non-finite {what} at step {step}")
        self.step = step


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    cyclic: tuple = None   # (base_lr, max_lr, period) or None

    def __post_init__(self):
        if self.lr <= 0.0 or not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("bad Adam hyperparameters")
        if self.cyclic is not None:
            base, top, period = self.cyclic
            if not (0.0 < base <= top) or period < 1:
                raise ValueError("bad cyclic schedule")
            object.__setattr__(self, "cyclic", (float(base), float(top), int(period)))


def cyclic_lr(cfg_cyclic, step):
    """Triangular wave: base at step 0, peak at period/2, back to base at period."""
    base, top, period = cfg_cyclic
    phase = (step % period) / period
    return base + (top - base) * (1.0 - abs(2.0 * phase - 1.0))


@dataclass
class AdamState:
    config: AdamConfig
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def current_lr(self):
        if self.config.cyclic is not None:
            return cyclic_lr(self.config.cyclic, self.step)
        return self.config.lr

    def to_doc(self):
        return {
            "config": {
                "lr": self.config.lr, "beta1": self.config.beta1,
                "beta2": self.config.beta2, "eps": self.config.eps,
                "weight_decay": self.config.weight_decay,
                "cyclic": list(self.config.cyclic) if self.config.cyclic else None,
            },
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
            "step": self.step,
        }

    @classmethod
    def from_doc(cls, doc):
        cfg = dict(doc["config"])
        if cfg.get("cyclic"):
            cfg["cyclic"] = tuple(cfg["cyclic"])
        state = cls(AdamConfig(**cfg))
        state.m = {k: np.asarray(v, dtype=np.float64) for k, v in doc["m"].items()}
        state.v = {k: np.asarray(v, dtype=np.float64) for k, v in doc["v"].items()}
        state.step = doc["step"]
        return state


def adam_step(state, params, grads):
    """One in-place Adam update of `params` (name -> ndarray) from `grads`.

    Weight decay is decoupled (applied to the parameter directly, not mixed
    into the moment estimates). The schedule, when configured, replaces the
    base lr with the triangular cyclic value at the pre-increment step count.
    """
    cfg = state.config
    lr = state.current_lr()
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise DivergenceError(t, what=f"gradient for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p)
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        if cfg.weight_decay:
            p -= lr * cfg.weight_decay * p
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params
