"""ResNet-18/50 backbones with optional attention gates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import functional as F
from .autodiff import Var
from .gate import DASGate, GateConfig
from .layers import ConvLayer, CostRow, Linear, Module, Norm, NormKind

STAGE_BLOCKS = {18: (2, 2, 2, 2), 50: (3, 4, 6, 3)}
PLACEMENTS = {
    "none": "none",
    "four": "four_stages",
    "four_stages": "four_stages",
    "all": "all_blocks",
    "all_blocks": "all_blocks",
}


@dataclass
class ModelConfig:
    depth: int = 18
    num_classes: int = 1000
    input_size: Tuple[int, int] = (224, 224)
    gate_placement: str = "none"
    gate: GateConfig = field(default_factory=GateConfig)
    base_width: int = 64
    num_stages: int = 4
    stem: str = "auto"
    seed: int = 0

    def __post_init__(self):
        if self.depth not in STAGE_BLOCKS:
            raise ValueError(f"unsupported depth {self.depth}; choose 18 or 50")
        if self.gate_placement not in PLACEMENTS:
            raise ValueError(f"unknown gate placement {self.gate_placement!r}")
        self.gate_placement = PLACEMENTS[self.gate_placement]
        self.input_size = tuple(int(s) for s in self.input_size)
        if min(self.input_size) < 32:
            raise ValueError(f"input size must be at least 32x32, got {self.input_size}")
        if not 1 <= self.num_stages <= 4:
            raise ValueError(f"num_stages must be 1..4, got {self.num_stages}")
        if self.stem == "auto":
            self.stem = "cifar" if max(self.input_size) < 64 else "imagenet"
        if self.stem not in ("cifar", "imagenet"):
            raise ValueError(f"unknown stem {self.stem!r}")


def _bn(c):
    return Norm(NormKind.BATCH, c, affine=True)


class BasicBlock(Module):
    expansion = 1

    def __init__(self, c_in, planes, stride, rng):
        self.conv1 = ConvLayer(c_in, planes, 3, stride, 1, rng=rng)
        self.bn1 = _bn(planes)
        self.conv2 = ConvLayer(planes, planes, 3, 1, 1, rng=rng)
        self.bn2 = _bn(planes)
        if stride != 1 or c_in != planes:
            self.downsample = [ConvLayer(c_in, planes, 1, stride, 0, rng=rng), _bn(planes)]

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = self.downsample[1](self.downsample[0](x)) if hasattr(self, "downsample") else x
        return F.relu(out + skip)

    def trace(self, shape, rows, name):
        s = self.conv1.trace(shape, rows, f"{name}.conv1")
        s = self.bn1.trace(s, rows, f"{name}.bn1")
        s = self.conv2.trace(s, rows, f"{name}.conv2")
        s = self.bn2.trace(s, rows, f"{name}.bn2")
        if hasattr(self, "downsample"):
            d = self.downsample[0].trace(shape, rows, f"{name}.downsample.0")
            self.downsample[1].trace(d, rows, f"{name}.downsample.1")
        return s


class Bottleneck(Module):
    expansion = 4

    def __init__(self, c_in, planes, stride, rng):
        out = planes * self.expansion
        self.conv1 = ConvLayer(c_in, planes, 1, 1, 0, rng=rng)
        self.bn1 = _bn(planes)
        self.conv2 = ConvLayer(planes, planes, 3, stride, 1, rng=rng)
        self.bn2 = _bn(planes)
        self.conv3 = ConvLayer(planes, out, 1, 1, 0, rng=rng)
        self.bn3 = _bn(out)
        if stride != 1 or c_in != out:
            self.downsample = [ConvLayer(c_in, out, 1, stride, 0, rng=rng), _bn(out)]

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        skip = self.downsample[1](self.downsample[0](x)) if hasattr(self, "downsample") else x
        return F.relu(out + skip)

    def trace(self, shape, rows, name):
        s = shape
        for part in ("conv1", "bn1", "conv2", "bn2", "conv3", "bn3"):
            s = getattr(self, part).trace(s, rows, f"{name}.{part}")
        if hasattr(self, "downsample"):
            d = self.downsample[0].trace(shape, rows, f"{name}.downsample.0")
            self.downsample[1].trace(d, rows, f"{name}.downsample.1")
        return s


class Network(Module):
    """A built ResNet.

    Stage ``k`` lives in attribute ``layer{k}`` (a list of blocks); gates
    live in the ``gate`` dict keyed by the stage or block they follow, so
    their parameters are named ``gate.layer3...`` or ``gate.layer3.1...``.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        gate_rng = np.random.default_rng([cfg.seed, 1])
        block = BasicBlock if cfg.depth == 18 else Bottleneck
        w0 = cfg.base_width
        if cfg.stem == "imagenet":
            self.conv1 = ConvLayer(3, w0, 7, 2, 3, rng=rng)
        else:
            self.conv1 = ConvLayer(3, w0, 3, 1, 1, rng=rng)
        self.bn1 = _bn(w0)
        self.stage_names: List[str] = []
        c_in = w0
        for i, n_blocks in enumerate(STAGE_BLOCKS[cfg.depth][: cfg.num_stages]):
            planes = w0 * 2 ** i
            stride = 1 if i == 0 else 2
            blocks = []
            for j in range(n_blocks):
                blocks.append(block(c_in, planes, stride if j == 0 else 1, rng))
                c_in = planes * block.expansion
            name = f"layer{i + 1}"
            setattr(self, name, blocks)
            self.stage_names.append(name)
        self.fc = Linear(c_in, cfg.num_classes, rng)
        self.gate: Dict[str, DASGate] = {}
        if cfg.gate_placement != "none":
            for name in self.stage_names:
                blocks = getattr(self, name)
                width = _block_out(blocks[-1])
                if cfg.gate_placement == "four_stages":
                    self.gate[name] = DASGate(width, cfg.gate, gate_rng)
                else:
                    for j, b in enumerate(blocks):
                        self.gate[f"{name}.{j}"] = DASGate(_block_out(b), cfg.gate, gate_rng)
        # shape-only dry run; raises on any inconsistency
        self.stage_shapes: Dict[str, Tuple[int, int, int, int]] = {}
        self.trace((1, 3) + cfg.input_size, [], "", self.stage_shapes)

    @property
    def gates(self) -> List[DASGate]:
        return list(self.gate.values())

    def trace(self, shape, rows, name="", stages=None):
        s = self.conv1.trace(shape, rows, "conv1")
        s = self.bn1.trace(s, rows, "bn1")
        if self.cfg.stem == "imagenet":
            s = (s[0], s[1], (s[2] - 1) // 2 + 1, (s[3] - 1) // 2 + 1)
        for stage in self.stage_names:
            for j, blk in enumerate(getattr(self, stage)):
                s = blk.trace(s, rows, f"{stage}.{j}")
                key = f"{stage}.{j}"
                if key in self.gate:
                    s = self.gate[key].trace(s, rows, f"gate.{key}")
            if stage in self.gate:
                s = self.gate[stage].trace(s, rows, f"gate.{stage}")
            if stages is not None:
                stages[stage] = s
        s = (s[0], s[1], 1, 1)
        return self.fc.trace(s, rows, "fc")

    def forward(self, x, record: Optional[Dict[str, Var]] = None) -> Var:
        if not isinstance(x, Var):
            x = Var(np.asarray(x, dtype=np.float64))
        expected = (3,) + self.cfg.input_size
        if x.value.ndim != 4 or x.value.shape[1:] != expected:
            raise ValueError(f"expected a batch of shape (n, {expected[0]}, {expected[1]}, {expected[2]}), "
                             f"got {x.value.shape}")
        out = F.relu(self.bn1(self.conv1(x)))
        if self.cfg.stem == "imagenet":
            out = F.max_pool(out, 3, 2, 1)
        if record is not None:
            record["stem"] = out
        for stage in self.stage_names:
            for j, blk in enumerate(getattr(self, stage)):
                out = blk(out)
                key = f"{stage}.{j}"
                if key in self.gate:
                    out = self.gate[key](out)
                if record is not None:
                    record[key] = out
            if stage in self.gate:
                out = self.gate[stage](out)
            if record is not None:
                record[stage] = out
        return self.fc(F.global_avg_pool(out))

    def cost_rows(self, input_size=None) -> List[CostRow]:
        size = tuple(input_size) if input_size is not None else self.cfg.input_size
        rows: List[CostRow] = []
        self.trace((1, 3) + size, rows)
        return rows


def _block_out(block) -> int:
    return block.conv3.c_out if hasattr(block, "conv3") else block.conv2.c_out


def build_model(cfg: ModelConfig) -> Network:
    return Network(cfg)


def forward_logits(net: Network, batch) -> Var:
    return net(batch)
