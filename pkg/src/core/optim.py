# src/core/optim.py
"""
Plain SGD with L2 weight decay and a step learning-rate schedule:

    lr(epoch) = lr0 * decay ** (epoch // decay_every)
    θ <- θ - lr * (∂ℓ/∂θ + wd * θ)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from src.core.tensor_engine import ParamStore
from src.exceptions import ConfigError
from src.schemas.config_schemas import OptimizerConfig

logger = logging.getLogger(__name__)


@dataclass
class OptimState:
    learning_rate: float
    lr_decay: float
    decay_every_epochs: int
    weight_decay: float = 0.0
    momentum: float = 0.0
    dropout: float = 0.0
    step: int = 0
    epoch: int = 0
    velocity: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must satisfy 0 <= p < 1, got {self.dropout}")
        if self.decay_every_epochs <= 0:
            raise ConfigError("decay interval must be a positive number of epochs")

    @classmethod
    def from_config(cls, cfg: OptimizerConfig, dropout: float = 0.0) -> "OptimState":
        return cls(
            learning_rate=cfg.learning_rate,
            lr_decay=cfg.lr_decay,
            decay_every_epochs=cfg.decay_every_epochs,
            weight_decay=cfg.weight_decay,
            momentum=cfg.momentum,
            dropout=dropout,
        )

    @property
    def lr(self) -> float:
        return learning_rate_at(self.learning_rate, self.lr_decay, self.decay_every_epochs, self.epoch)


def learning_rate_at(lr0: float, decay: float, every: int, epoch: int) -> float:
    return lr0 * decay ** (epoch // every)


def sgd_step(params: ParamStore, opt: OptimState) -> None:
    """One update of every parameter; raises NoGradient for parameters the loss never reached."""
    grads = params.gradients()
    lr = opt.lr
    for name, p in params.items():
        g = grads[name] + opt.weight_decay * p.data
        if opt.momentum > 0.0:
            v = opt.velocity.get(name)
            v = g if v is None else opt.momentum * v + g
            opt.velocity[name] = v
            g = v
        p.data = (p.data - lr * g).astype(p.data.dtype, copy=False)
    opt.step += 1
