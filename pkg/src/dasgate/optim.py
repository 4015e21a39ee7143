"""SGD with momentum and the step / cosine learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 300
    lr0: float = 0.1
    weight_decay: float = 5e-4
    momentum: float = 0.9
    schedule: str = "step"
    milestones: Tuple[int, ...] = (70, 130, 200, 260)
    gamma: float = 0.2
    eta_min: float = 0.0
    seed: int = 0
    augment: bool = False

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        self.milestones = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {self.milestones}")
        if self.schedule not in ("step", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    # published recipes
    @classmethod
    def cifar100(cls, **kw) -> "TrainConfig":
        base = dict(batch_size=128, epochs=300, lr0=0.1, weight_decay=5e-4,
                    schedule="step", milestones=(70, 130, 200, 260), gamma=0.2, augment=True)
        return cls(**{**base, **kw})

    @classmethod
    def imagenet(cls, **kw) -> "TrainConfig":
        base = dict(batch_size=256, epochs=100, lr0=0.1, weight_decay=1e-4,
                    schedule="step", milestones=(30, 60, 90), gamma=0.1)
        return cls(**{**base, **kw})

    @classmethod
    def dogs(cls, **kw) -> "TrainConfig":
        base = dict(batch_size=32, lr0=0.1, weight_decay=1e-4, schedule="cosine", augment=True)
        return cls(**{**base, **kw})


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if cfg.schedule == "step":
        passed = sum(1 for m in cfg.milestones if epoch >= m)
        return cfg.lr0 * cfg.gamma ** passed
    t = min(epoch, cfg.epochs) / max(cfg.epochs, 1)
    return cfg.eta_min + (cfg.lr0 - cfg.eta_min) * (1 + math.cos(math.pi * t)) / 2


def sgd_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: Sequence[np.ndarray],
               lr: float, cfg: TrainConfig) -> None:
    """In-place step: ``v = momentum*v + g + wd*p``; ``p -= lr*v``."""
    for p, g, v in zip(params, grads, state):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, buffer {v.shape}")
        v *= cfg.momentum
        v += g
        if cfg.weight_decay:
            v += cfg.weight_decay * p
        p -= lr * v


@dataclass
class SGD:
    """Momentum buffers keyed by parameter name."""

    named_params: Dict[str, object]
    cfg: TrainConfig
    momentum_buffers: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.named_params.items():
            self.momentum_buffers.setdefault(name, np.zeros_like(p.value))

    def step(self, lr: float) -> None:
        names = list(self.named_params)
        sgd_update(
            [self.named_params[k].value for k in names],
            [self.named_params[k].grad for k in names],
            [self.momentum_buffers[k] for k in names],
            lr,
            self.cfg,
        )

    def zero_grad(self) -> None:
        for p in self.named_params.values():
            p.zero_grad()
