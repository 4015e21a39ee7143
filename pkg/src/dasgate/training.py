"""Mini-batch training and evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import functional as F
from .autodiff import Var, backward, no_grad
from .data import augment_flip_crop
from .optim import SGD, TrainConfig, lr_at_epoch

log = logging.getLogger(__name__)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    eval_acc: float


@dataclass
class TrainResult:
    net: object
    history: List[EpochLog] = field(default_factory=list)
    optimizer: Optional[SGD] = None

    def to_csv(self) -> str:
        lines = ["epoch,lr,train_loss,train_acc,eval_acc"]
        for r in self.history:
            lines.append(f"{r.epoch},{r.lr!r},{r.train_loss!r},{r.train_acc!r},{r.eval_acc!r}")
        return "\n".join(lines) + "\n"


def predict_logits(net, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    net.eval()
    out = []
    with no_grad():
        for i in range(0, len(X), batch_size):
            out.append(net(Var(X[i : i + batch_size])).value[:, :, 0, 0])
    return np.concatenate(out) if out else np.zeros((0, 0))


def evaluate(net, X: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    if len(X) == 0:
        return float("nan")
    return float((predict_logits(net, X, batch_size).argmax(axis=1) == y).mean())


def train(net, X: np.ndarray, y: np.ndarray, cfg: TrainConfig,
          X_eval: Optional[np.ndarray] = None, y_eval: Optional[np.ndarray] = None,
          optimizer: Optional[SGD] = None, start_epoch: int = 0) -> TrainResult:
    """SGD on cross-entropy; one history row per epoch.

    Shuffling and augmentation draw from a generator seeded by
    ``cfg.seed``, so a sequential run is bitwise reproducible.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if not np.all(np.isfinite(X)):
        raise ValueError("training images contain NaN or infinite values")
    n_classes = net.cfg.num_classes if hasattr(net, "cfg") else None
    if n_classes is not None and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]")
    rng = np.random.default_rng(cfg.seed)
    opt = optimizer or SGD(dict(net.named_parameters()), cfg)
    result = TrainResult(net, optimizer=opt)
    step = 0
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        net.train()
        order = rng.permutation(len(X))
        total_loss, correct = 0.0, 0
        for i in range(0, len(X), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            xb = X[idx]
            if cfg.augment:
                xb = augment_flip_crop(xb, rng)
            logits = net(Var(xb))
            loss = F.cross_entropy(logits, y[idx])
            value = float(loss.value.reshape(()))
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss {value} at epoch {epoch}, step {step}")
            opt.zero_grad()
            backward(loss)
            opt.step(lr)
            total_loss += value * len(idx)
            correct += int((logits.value[:, :, 0, 0].argmax(axis=1) == y[idx]).sum())
            step += 1
        eval_acc = evaluate(net, X_eval, y_eval) if X_eval is not None else float("nan")
        row = EpochLog(epoch, lr, total_loss / len(X), correct / len(X), eval_acc)
        result.history.append(row)
        log.info("epoch %d lr %.4g loss %.4f train_acc %.3f eval_acc %.3f",
                 epoch, lr, row.train_loss, row.train_acc, row.eval_acc)
    return result


def full_batch_losses(net, X: np.ndarray, y: np.ndarray, lr: float, steps: int,
                      cfg: Optional[TrainConfig] = None) -> List[float]:
    """Loss before each of ``steps`` full-batch SGD steps."""
    cfg = cfg or TrainConfig(lr0=lr, epochs=1)
    opt = SGD(dict(net.named_parameters()), cfg)
    net.train()
    losses = []
    for _ in range(steps):
        loss = F.cross_entropy(net(Var(X)), y)
        losses.append(float(loss.value.reshape(())))
        opt.zero_grad()
        backward(loss)
        opt.step(lr)
    return losses
