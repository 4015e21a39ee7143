"""scikit-learn style classifier around a gated mini-ResNet."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, column_or_1d

from .gate import GateConfig
from .models import ModelConfig, build_model
from .optim import TrainConfig
from .training import predict_logits, train


def check_image_batch(X, channels: int = 3) -> np.ndarray:
    """Return ``X`` as a finite float64 (n, channels, h, w) array.

    Channels-last input (n, h, w, channels) is transposed.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise ValueError(f"expected a 4-D image batch, got shape {X.shape}")
    if X.shape[1] != channels and X.shape[3] == channels:
        X = X.transpose(0, 3, 1, 2)
    if X.shape[1] != channels:
        raise ValueError(f"expected {channels} channels, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty image batch")
    if not np.all(np.isfinite(X)):
        raise ValueError("image batch contains NaN or infinite values")
    return np.ascontiguousarray(X)


class DASClassifier(ClassifierMixin, BaseEstimator):
    """ResNet-18 style image classifier with optional attention gates.

    ``gates`` is one of ``"none"``, ``"four"`` or ``"all"``; the remaining
    gate and training arguments map onto :class:`GateConfig` and
    :class:`TrainConfig`.
    """

    def __init__(self, depth=18, num_stages=2, base_width=16, gates="four", alpha=0.2,
                 variant="c_das", first_norm="instance", second_norm="layer",
                 epochs=30, batch_size=32, lr=0.05, weight_decay=5e-4, momentum=0.9,
                 schedule="cosine", augment=False, random_state=0):
        self.depth = depth
        self.num_stages = num_stages
        self.base_width = base_width
        self.gates = gates
        self.alpha = alpha
        self.variant = variant
        self.first_norm = first_norm
        self.second_norm = second_norm
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.schedule = schedule
        self.augment = augment
        self.random_state = random_state

    def _model_config(self, n_classes, size):
        gate = GateConfig(alpha=self.alpha, variant=self.variant,
                          first_norm=self.first_norm, second_norm=self.second_norm)
        return ModelConfig(depth=self.depth, num_classes=n_classes, input_size=size,
                           gate_placement=self.gates, gate=gate, base_width=self.base_width,
                           num_stages=self.num_stages, seed=self.random_state)

    def fit(self, X, y):
        X = check_image_batch(X)
        y = column_or_1d(y, warn=True)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.image_size_ = X.shape[2:]
        self.network_ = build_model(self._model_config(len(self.classes_), self.image_size_))
        tcfg = TrainConfig(batch_size=self.batch_size, epochs=self.epochs, lr0=self.lr,
                           weight_decay=self.weight_decay, momentum=self.momentum,
                           schedule=self.schedule, milestones=(), seed=self.random_state,
                           augment=self.augment)
        self.history_ = train(self.network_, X, y_idx, tcfg).history
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_image_batch(X)
        if X.shape[2:] != self.image_size_:
            raise ValueError(f"expected images of size {self.image_size_}, got {X.shape[2:]}")
        return predict_logits(self.network_, X)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self, "classes_")
        return self.classes_[self.decision_function(X).argmax(axis=1)]
