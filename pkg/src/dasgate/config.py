"""Plain-text ``key = value`` configuration files.

Keys are namespaced (``model.*``, ``gate.*``, ``train.*``, ``data.*``);
``#`` starts a comment.  Unknown keys are rejected so typos surface early.
"""

from __future__ import annotations

import os
from typing import Dict

from .data import DatasetSpec
from .gate import GateConfig
from .models import ModelConfig
from .optim import TrainConfig

KNOWN_KEYS = {
    "model.depth", "model.classes", "model.gates", "model.width", "model.stages",
    "model.input_size", "model.stem", "model.seed",
    "gate.variant", "gate.alpha", "gate.first_norm", "gate.second_norm",
    "train.preset", "train.batch_size", "train.epochs", "train.lr", "train.weight_decay",
    "train.momentum", "train.schedule", "train.milestones", "train.gamma", "train.eta_min",
    "train.augment", "train.seed",
    "data.kind", "data.path", "data.eval_path", "data.classes", "data.samples",
    "data.eval_samples", "data.image_size",
}


def parse_config(text: str, source: str = "<config>") -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def load_config(path) -> Dict[str, str]:
    if path is None:
        return {}
    with open(os.fspath(path), encoding="utf-8") as fh:
        return parse_config(fh.read(), os.fspath(path))


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _size(s: str):
    parts = s.lower().replace(",", "x").split("x")
    return (int(parts[0]), int(parts[-1]))


def gate_config(cfg: Dict[str, str]) -> GateConfig:
    kw = {}
    if "gate.alpha" in cfg:
        kw["alpha"] = float(cfg["gate.alpha"])
    if "gate.variant" in cfg:
        kw["variant"] = cfg["gate.variant"]
    if "gate.first_norm" in cfg:
        kw["first_norm"] = cfg["gate.first_norm"]
    if "gate.second_norm" in cfg:
        kw["second_norm"] = cfg["gate.second_norm"]
    return GateConfig(**kw)


def model_config(cfg: Dict[str, str], **defaults) -> ModelConfig:
    kw = dict(defaults)
    mapping = {
        "model.depth": ("depth", int),
        "model.classes": ("num_classes", int),
        "model.gates": ("gate_placement", str),
        "model.width": ("base_width", int),
        "model.stages": ("num_stages", int),
        "model.input_size": ("input_size", _size),
        "model.stem": ("stem", str),
        "model.seed": ("seed", int),
    }
    for key, (field_name, conv) in mapping.items():
        if key in cfg:
            kw[field_name] = conv(cfg[key])
    kw["gate"] = gate_config(cfg)
    return ModelConfig(**kw)


def train_config(cfg: Dict[str, str], **defaults) -> TrainConfig:
    kw = dict(defaults)
    mapping = {
        "train.batch_size": ("batch_size", int),
        "train.epochs": ("epochs", int),
        "train.lr": ("lr0", float),
        "train.weight_decay": ("weight_decay", float),
        "train.momentum": ("momentum", float),
        "train.schedule": ("schedule", str),
        "train.milestones": ("milestones", lambda s: tuple(int(m) for m in s.split(",") if m.strip())),
        "train.gamma": ("gamma", float),
        "train.eta_min": ("eta_min", float),
        "train.augment": ("augment", _bool),
        "train.seed": ("seed", int),
    }
    for key, (field_name, conv) in mapping.items():
        if key in cfg:
            kw[field_name] = conv(cfg[key])
    preset = cfg.get("train.preset")
    if preset:
        factory = {"cifar100": TrainConfig.cifar100, "imagenet": TrainConfig.imagenet,
                   "dogs": TrainConfig.dogs}.get(preset)
        if factory is None:
            raise ValueError(f"unknown train.preset {preset!r}")
        return factory(**kw)
    return TrainConfig(**kw)


def dataset_spec(cfg: Dict[str, str], **defaults) -> DatasetSpec:
    kw = dict(defaults)
    if "data.kind" in cfg:
        kw["kind"] = cfg["data.kind"]
    if "data.path" in cfg:
        kw["path"] = cfg["data.path"]
    if "data.classes" in cfg:
        kw["n_classes"] = int(cfg["data.classes"])
    if "data.samples" in cfg:
        kw["n_samples"] = int(cfg["data.samples"])
    if "data.image_size" in cfg:
        kw["image_size"] = int(cfg["data.image_size"])
    return DatasetSpec(**kw)
