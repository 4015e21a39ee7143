"""Run every gate variant through the same desk-scale training recipe."""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np

from .analysis import count_macs
from .data import DatasetSpec, gen_synthetic
from .gate import GateConfig, Variant
from .models import ModelConfig, build_model
from .optim import TrainConfig
from .training import evaluate, train


@dataclass
class AblationRow:
    variant: str
    params: int
    macs: int
    desk_params: int
    train_acc: float
    eval_acc: float


def desk_model_config(n_classes: int, gate: Optional[GateConfig], width: int = 16, seed: int = 0) -> ModelConfig:
    """CIFAR-stem ResNet-18 cut down to its first two stages."""
    return ModelConfig(
        depth=18, num_classes=n_classes, input_size=(32, 32),
        gate_placement="none" if gate is None else "four_stages",
        gate=gate or GateConfig(), base_width=width, num_stages=2, seed=seed,
    )


def structural_cost(gate: Optional[GateConfig]):
    """Parameters and MACs of ResNet-18/1000 at 224x224 with four gates."""
    cfg = ModelConfig(depth=18, num_classes=1000, input_size=(224, 224),
                      gate_placement="none" if gate is None else "four_stages",
                      gate=gate or GateConfig())
    rep = count_macs(build_model(cfg), (224, 224))
    return rep.total_params, rep.total_macs


def run_ablation(
    variants: Iterable = tuple(Variant),
    epochs: int = 2,
    data: Optional[DatasetSpec] = None,
    train_cfg: Optional[TrainConfig] = None,
    base_gate: Optional[GateConfig] = None,
    width: int = 16,
    seed: int = 0,
    include_baseline: bool = True,
) -> List[AblationRow]:
    data = data or DatasetSpec(n_classes=3, n_samples=90)
    X, y = gen_synthetic(data, seed)
    Xe, ye = gen_synthetic(dataclasses.replace(data, n_samples=max(data.n_classes * 10, data.n_samples // 3)), seed + 1)
    tcfg = train_cfg or TrainConfig(batch_size=32, epochs=epochs, lr0=0.05, weight_decay=5e-4,
                                    schedule="cosine", seed=seed)
    tcfg = dataclasses.replace(tcfg, epochs=epochs)
    base_gate = base_gate or GateConfig()
    entries = [("none", None)] if include_baseline else []
    entries += [(Variant.parse(v).value, dataclasses.replace(base_gate, variant=Variant.parse(v)))
                for v in variants]
    rows = []
    for name, gate in entries:
        params, macs = structural_cost(gate)
        net = build_model(desk_model_config(data.n_classes, gate, width, seed))
        hist = train(net, X, y, tcfg).history
        train_acc = hist[-1].train_acc if hist else float("nan")
        rows.append(AblationRow(name, params, macs, net.num_parameters(), train_acc, evaluate(net, Xe, ye)))
    return rows


def ablation_csv(rows: List[AblationRow]) -> str:
    buf = io.StringIO()
    buf.write("variant,params,macs,desk_params,train_acc,eval_acc\n")
    for r in rows:
        buf.write(f"{r.variant},{r.params},{r.macs},{r.desk_params},{r.train_acc:.4f},{r.eval_acc:.4f}\n")
    return buf.getvalue()
