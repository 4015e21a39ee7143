"""The deformable attention gate and its design-evolution variants.

The default gate compresses ``c`` channels to a bottleneck with a
depthwise-separable conv, normalizes and applies GELU, expands back to
``c`` with a modulated deformable conv, normalizes again, squashes with a
sigmoid and multiplies the result into the gate's input.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

from . import functional as F
from .autodiff import Var
from .layers import (
    ConvLayer,
    CostRow,
    DeformableConvLayer,
    DepthwiseSeparableConv,
    Module,
    Norm,
    NormKind,
    _rng,
)


class Variant(str, enum.Enum):
    C_DAS = "c_das"
    A_GRIDSAMPLE_CONCAT = "a_gridsample_concat"
    B_GRIDSAMPLE_GATED = "b_gridsample_gated"
    D_DEFORM_ONLY = "d_deform_only"
    E_DSC_ONLY = "e_dsc_only"
    F_DSC_FOR_DEFORM = "f_dsc_for_deform"
    G_DEFORM_FEEDFORWARD = "g_deform_feedforward"
    H_GATE_LAYERS_FEEDFORWARD = "h_gate_layers_feedforward"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for v in cls:
            # accept the bare letter too: "a", "c", ...
            if key in (v.value, v.value[0]) or (key == "das" and v is cls.C_DAS):
                return v
        raise ValueError(f"unknown gate variant {value!r}")

    @property
    def gated(self) -> bool:
        """Whether the variant multiplies its input by an attention map."""
        return self not in (Variant.A_GRIDSAMPLE_CONCAT, Variant.G_DEFORM_FEEDFORWARD,
                            Variant.H_GATE_LAYERS_FEEDFORWARD)


@dataclass
class GateConfig:
    alpha: float = 0.2
    first_norm: NormKind = NormKind.INSTANCE
    second_norm: NormKind = NormKind.LAYER
    variant: Variant = Variant.C_DAS
    eps: float = 1e-5

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        self.first_norm = NormKind.parse(self.first_norm)
        self.second_norm = NormKind.parse(self.second_norm)
        self.variant = Variant.parse(self.variant)


def bottleneck_width(alpha: float, c: int) -> int:
    """Channels after compression: ``max(1, round_half_up(alpha * c))``."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if c < 1:
        raise ValueError(f"channel count must be positive, got {c}")
    return max(1, math.floor(alpha * c + 0.5))


class DASGate(Module):
    """Attention gate for a ``channels``-wide feature map.

    Which sub-layers exist depends on ``cfg.variant``.  Setting
    ``forced_attention`` replaces the attention map by a constant, which
    turns the gate into a fixed scaling (1.0 makes it the identity).
    """

    def __init__(self, channels: int, cfg: Optional[GateConfig] = None, rng=None):
        cfg = cfg or GateConfig()
        rng = _rng(rng)
        self.channels = c = channels
        self.cfg = cfg
        self.width = m = bottleneck_width(cfg.alpha, c)
        self.forced_attention: Optional[float] = None
        v = cfg.variant

        if v in (Variant.C_DAS, Variant.F_DSC_FOR_DEFORM, Variant.H_GATE_LAYERS_FEEDFORWARD):
            self.bottleneck = DepthwiseSeparableConv(c, m, rng)
            self.norm1 = Norm(cfg.first_norm, m, cfg.eps)
        if v in (Variant.C_DAS, Variant.H_GATE_LAYERS_FEEDFORWARD):
            self.deform = DeformableConvLayer(m, c, rng)
        elif v in (Variant.D_DEFORM_ONLY, Variant.G_DEFORM_FEEDFORWARD):
            self.deform = DeformableConvLayer(c, c, rng)
        elif v is Variant.F_DSC_FOR_DEFORM:
            self.expand = DepthwiseSeparableConv(m, c, rng)
        elif v is Variant.E_DSC_ONLY:
            self.expand = DepthwiseSeparableConv(c, c, rng)
        elif v is Variant.A_GRIDSAMPLE_CONCAT:
            self.grid = ConvLayer(c, 2, 3, 1, 1, zero_init=True)
            self.fuse = ConvLayer(2 * c, c, 3, 1, 1, rng=rng)
        elif v is Variant.B_GRIDSAMPLE_GATED:
            self.compress = ConvLayer(c, m, 1, 1, 0, rng=rng)
            self.compress_sampled = ConvLayer(c, m, 1, 1, 0, rng=rng)
            self.grid = ConvLayer(c, 2, 3, 1, 1, zero_init=True)
            self.fuse = ConvLayer(2 * m, c, 1, 1, 0, rng=rng)
        if v is not Variant.G_DEFORM_FEEDFORWARD and v is not Variant.A_GRIDSAMPLE_CONCAT \
                and v is not Variant.B_GRIDSAMPLE_GATED:
            self.norm2 = Norm(cfg.second_norm, c, cfg.eps)

    @property
    def variant(self) -> Variant:
        return self.cfg.variant

    def _compressed(self, x: Var) -> Var:
        return F.gelu(self.norm1(self.bottleneck(x)))

    def attention(self, x: Var) -> Var:
        """Pre-multiplication output: the attention map for gated variants."""
        v = self.variant
        if v is Variant.C_DAS:
            return F.sigmoid(self.norm2(self.deform(self._compressed(x))))
        if v is Variant.F_DSC_FOR_DEFORM:
            return F.sigmoid(self.norm2(self.expand(self._compressed(x))))
        if v is Variant.D_DEFORM_ONLY:
            return F.sigmoid(self.norm2(self.deform(x)))
        if v is Variant.E_DSC_ONLY:
            return F.sigmoid(self.norm2(self.expand(x)))
        if v is Variant.B_GRIDSAMPLE_GATED:
            sampled = F.grid_sample(self.compress_sampled(x), self.grid(x))
            return F.sigmoid(self.fuse(F.concat([self.compress(x), sampled])))
        raise ValueError(f"variant {v.value} has no attention map")

    def forward(self, x: Var) -> Var:
        return variant_forward(x, self)

    def trace(self, shape, rows, name):
        if shape[1] != self.channels:
            raise ValueError(f"{name}: gate built for {self.channels} channels, got {shape[1]}")
        v = self.variant
        if v in (Variant.C_DAS, Variant.F_DSC_FOR_DEFORM, Variant.H_GATE_LAYERS_FEEDFORWARD):
            s = self.bottleneck.trace(shape, rows, f"{name}.bottleneck")
            s = self.norm1.trace(s, rows, f"{name}.norm1")
            if v is Variant.F_DSC_FOR_DEFORM:
                s = self.expand.trace(s, rows, f"{name}.expand")
            else:
                s = self.deform.trace(s, rows, f"{name}.deform")
        elif v in (Variant.D_DEFORM_ONLY, Variant.G_DEFORM_FEEDFORWARD):
            s = self.deform.trace(shape, rows, f"{name}.deform")
        elif v is Variant.E_DSC_ONLY:
            s = self.expand.trace(shape, rows, f"{name}.expand")
        elif v is Variant.A_GRIDSAMPLE_CONCAT:
            self.grid.trace(shape, rows, f"{name}.grid")
            n, c, h, w = shape
            rows.append(CostRow(f"{name}.grid_sample", 0, 4 * c * h * w))
            s = self.fuse.trace((n, 2 * c, h, w), rows, f"{name}.fuse")
        else:  # B
            n, c, h, w = shape
            self.grid.trace(shape, rows, f"{name}.grid")
            self.compress.trace(shape, rows, f"{name}.compress")
            self.compress_sampled.trace(shape, rows, f"{name}.compress_sampled")
            rows.append(CostRow(f"{name}.grid_sample", 0, 4 * self.width * h * w))
            s = self.fuse.trace((n, 2 * self.width, h, w), rows, f"{name}.fuse")
        if hasattr(self, "norm2"):
            s = self.norm2.trace(s, rows, f"{name}.norm2")
        if s != tuple(shape):
            raise ValueError(f"{name}: gate output {s} does not match input {shape}")
        return s


def das_forward(x: Var, gate: DASGate) -> Var:
    """Gate ``x`` by its deformable attention map: ``x * sigmoid(...)``."""
    if x.value.shape[1] != gate.channels:
        raise ValueError(f"gate expects {gate.channels} channels, got {x.value.shape[1]}")
    if gate.variant is not Variant.C_DAS:
        raise ValueError(f"das_forward needs a c_das gate, got {gate.variant.value}")
    if gate.forced_attention is not None:
        return x * float(gate.forced_attention)
    a = F.sigmoid(gate.norm2(gate.deform(F.gelu(gate.norm1(gate.bottleneck(x))))))
    return x * a


def variant_forward(x: Var, gate: DASGate) -> Var:
    if x.value.shape[1] != gate.channels:
        raise ValueError(f"gate expects {gate.channels} channels, got {x.value.shape[1]}")
    v = gate.variant
    if v is Variant.C_DAS:
        return das_forward(x, gate)
    if v.gated:
        if gate.forced_attention is not None:
            return x * float(gate.forced_attention)
        return x * gate.attention(x)
    if v is Variant.A_GRIDSAMPLE_CONCAT:
        return gate.fuse(F.concat([x, F.grid_sample(x, gate.grid(x))]))
    if v is Variant.G_DEFORM_FEEDFORWARD:
        return gate.deform(x)
    if v is Variant.H_GATE_LAYERS_FEEDFORWARD:
        return gate.norm2(gate.deform(gate._compressed(x)))
    raise ValueError(f"unknown variant {v!r}")


def gate_parameter_count(channels: int, cfg: Optional[GateConfig] = None) -> int:
    return DASGate(channels, cfg, rng=0).num_parameters()
