from .tape import Tape, Var, TapeConsumedError, backward
from .net import (DenseNetConfig, DenseNet, init_dense_net, spectral_normalize,
                  UnsupportedActivationError)
from .optim import AdamConfig, AdamState, adam_step, cyclic_lr, DivergenceError

__all__ = [
    "Tape", "Var", "TapeConsumedError", "backward",
    "DenseNetConfig", "DenseNet", "init_dense_net", "spectral_normalize",
    "UnsupportedActivationError",
    "AdamConfig", "AdamState", "adam_step", "cyclic_lr", "DivergenceError",
]
