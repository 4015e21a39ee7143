"""Parameterised layers built on :mod:`dasgate.functional`.

Modules hold their parameters as :class:`Var` attributes and expose them by
dot-separated names in attribute-definition order.  Each module can also
``trace`` an input shape, reporting its output shape and a cost row per
leaf layer without running any arithmetic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import functional as F
from .autodiff import Var, make_op
from .tensor import conv_output_size

Shape = Tuple[int, int, int, int]


@dataclass
class CostRow:
    name: str
    params: int
    macs: int


class NormKind(str, enum.Enum):
    BATCH = "batch"
    FEATURE = "feature"
    INSTANCE = "instance"
    LAYER = "layer"

    @classmethod
    def parse(cls, value) -> "NormKind":
        if isinstance(value, cls):
            return value
        aliases = {"bn": "batch", "fn": "feature", "in": "instance", "ln": "layer"}
        key = str(value).strip().lower().replace("norm", "").rstrip("_")
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown normalization {value!r}; use batch, feature, instance or layer")


class Module:
    training = True

    def forward(self, x: Var) -> Var:
        raise NotImplementedError

    def __call__(self, x: Var, **kwargs) -> Var:
        return self.forward(x, **kwargs)

    def _children(self) -> Iterator[Tuple[str, object]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, (Var, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Var, Module)):
                        yield f"{key}.{i}", item
            elif isinstance(val, dict):
                for k, item in val.items():
                    if isinstance(item, (Var, Module)):
                        yield f"{key}.{k}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Var]]:
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, Var):
                yield name, val
            else:
                yield from val.named_parameters(name + ".")

    def parameters(self) -> List[Var]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for key, val in self._children():
            if isinstance(val, Module):
                yield from val.named_modules(f"{prefix}{key}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, mod in self.named_modules(prefix):
            for bname, arr in getattr(mod, "_buffers", {}).items():
                yield (f"{name}.{bname}" if name else bname), arr

    def num_parameters(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            mod.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def trace(self, shape: Shape, rows: List[CostRow], name: str) -> Shape:
        raise NotImplementedError(f"{type(self).__name__} does not support shape tracing")


class Sequential(Module):
    def __init__(self, layers=()):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def trace(self, shape, rows, name):
        for i, layer in enumerate(self.layers):
            shape = layer.trace(shape, rows, f"{name}.layers.{i}" if name else f"layers.{i}")
        return shape


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


class ConvLayer(Module):
    """Bias-free square convolution."""

    def __init__(self, c_in, c_out, k=3, stride=1, pad=None, groups=1, rng=None, zero_init=False):
        if c_in % groups or c_out % groups:
            raise ValueError(f"groups={groups} must divide c_in={c_in} and c_out={c_out}")
        if k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {k}")
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.groups = groups
        shape = (c_out, c_in // groups, k, k)
        if zero_init:
            w = np.zeros(shape)
        else:
            w = kaiming_uniform(shape, (c_in // groups) * k * k, _rng(rng))
        self.weight = Var(w, requires_grad=True)

    def forward(self, x):
        return F.conv2d(x, self.weight, self.stride, self.pad, self.groups)

    def trace(self, shape, rows, name):
        n, c, h, w = shape
        if c != self.c_in:
            raise ValueError(f"{name}: expected {self.c_in} input channels, got {c}")
        ho = conv_output_size(h, self.k, self.stride, self.pad)
        wo = conv_output_size(w, self.k, self.stride, self.pad)
        macs = self.k * self.k * (self.c_in // self.groups) * self.c_out * ho * wo
        rows.append(CostRow(name, self.weight.value.size, macs))
        return (n, self.c_out, ho, wo)


class DepthwiseSeparableConv(Module):
    """3x3 depthwise conv followed by a 1x1 pointwise channel mix."""

    def __init__(self, c_in, c_out, rng=None):
        rng = _rng(rng)
        self.depthwise = ConvLayer(c_in, c_in, 3, 1, 1, groups=c_in, rng=rng)
        self.pointwise = ConvLayer(c_in, c_out, 1, 1, 0, rng=rng)

    def forward(self, x):
        return depthwise_separable_conv(x, self.depthwise, self.pointwise)

    def trace(self, shape, rows, name):
        shape = self.depthwise.trace(shape, rows, f"{name}.depthwise")
        return self.pointwise.trace(shape, rows, f"{name}.pointwise")


N_TAPS = 9


class DeformableConvLayer(Module):
    """3x3 modulated deformable convolution with a learned offset predictor.

    The predictor is a zero-initialised 3x3 conv producing 18 offset
    channels then 9 modulation logits, so a fresh layer behaves like a plain
    conv scaled by 0.5.  ``forced_modulation`` pins every modulation weight
    to a constant (used to pin it to 1 or 0 in tests).
    """

    def __init__(self, c_in, c_out, rng=None):
        rng = _rng(rng)
        self.c_in, self.c_out = c_in, c_out
        self.weight = Var(kaiming_uniform((c_out, c_in, 3, 3), c_in * 9, rng), requires_grad=True)
        self.offset_predictor = ConvLayer(c_in, 3 * N_TAPS, 3, 1, 1, zero_init=True)
        self.forced_modulation: Optional[float] = None

    def offsets_and_mask(self, x: Var) -> Tuple[Var, Var]:
        pred = self.offset_predictor(x)
        offsets = F.channel_slice(pred, 0, 2 * N_TAPS)
        if self.forced_modulation is not None:
            n, _, h, w = x.value.shape
            mask = Var(np.full((n, N_TAPS, h, w), float(self.forced_modulation)))
        else:
            mask = F.sigmoid(F.channel_slice(pred, 2 * N_TAPS, 3 * N_TAPS))
        return offsets, mask

    def forward(self, x):
        return deformable_conv2d(x, self)

    def trace(self, shape, rows, name):
        n, c, h, w = shape
        if c != self.c_in:
            raise ValueError(f"{name}: expected {self.c_in} input channels, got {c}")
        self.offset_predictor.trace(shape, rows, f"{name}.offset_predictor")
        conv_macs = N_TAPS * self.c_in * self.c_out * h * w
        # 4 MACs per bilinear sample, one sample per tap per input channel per site
        sample_macs = N_TAPS * 4 * self.c_in * h * w
        rows.append(CostRow(name, self.weight.value.size, conv_macs + sample_macs))
        return (n, self.c_out, h, w)


class Norm(Module):
    """One of the four normalizations; affine parameters are optional.

    Batch norm keeps running statistics (momentum 0.1) for eval mode.
    """

    def __init__(self, kind, channels: int, eps: float = 1e-5, affine: bool = False, momentum: float = 0.1):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.kind = NormKind.parse(kind)
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        if affine:
            self.weight = Var(np.ones(channels), requires_grad=True)
            self.bias = Var(np.zeros(channels), requires_grad=True)
        self._affine = affine
        self._buffers: Dict[str, np.ndarray] = {}
        if self.kind is NormKind.BATCH:
            self._buffers["running_mean"] = np.zeros((1, channels, 1, 1))
            self._buffers["running_var"] = np.ones((1, channels, 1, 1))

    def forward(self, x):
        y = normalize(x, self.kind, self.eps, training=self.training, running=self._buffers, momentum=self.momentum)
        if self._affine:
            y = y * self.weight_4d() + self.bias_4d()
        return y

    def weight_4d(self) -> Var:
        w = self.weight
        return make_op(w.value.reshape(1, -1, 1, 1), (w,), lambda g: (g.reshape(-1),))

    def bias_4d(self) -> Var:
        b = self.bias
        return make_op(b.value.reshape(1, -1, 1, 1), (b,), lambda g: (g.reshape(-1),))

    def trace(self, shape, rows, name):
        if shape[1] != self.channels:
            raise ValueError(f"{name}: expected {self.channels} channels, got {shape[1]}")
        rows.append(CostRow(name, 2 * self.channels if self._affine else 0, 0))
        return shape


class Linear(Module):
    def __init__(self, features, classes, rng=None):
        rng = _rng(rng)
        self.features, self.classes = features, classes
        self.weight = Var(kaiming_uniform((classes, features), features, rng), requires_grad=True)
        bound = 1.0 / math.sqrt(features)
        self.bias = Var(rng.uniform(-bound, bound, size=classes), requires_grad=True)

    def forward(self, x):
        return linear(x, self.weight, self.bias)

    def trace(self, shape, rows, name):
        n, c, h, w = shape
        if (c, h, w) != (self.features, 1, 1):
            raise ValueError(f"{name}: expected input (n, {self.features}, 1, 1), got {shape}")
        rows.append(CostRow(name, self.weight.value.size + self.bias.value.size, self.features * self.classes))
        return (n, self.classes, 1, 1)


# functional entry points -----------------------------------------------------

def conv2d(x: Var, layer: ConvLayer) -> Var:
    return layer(x)


def depthwise_separable_conv(x: Var, depthwise: ConvLayer, pointwise: ConvLayer) -> Var:
    c = x.value.shape[1]
    if depthwise.groups != depthwise.c_in or depthwise.c_in != c or depthwise.k != 3:
        raise ValueError(f"depthwise stage must be a 3x3 conv with groups = c_in = {c}")
    if pointwise.k != 1 or pointwise.c_in != c:
        raise ValueError(f"pointwise stage must be a 1x1 conv from {c} channels")
    return pointwise(depthwise(x))


def deformable_conv2d(x: Var, layer: DeformableConvLayer) -> Var:
    if x.value.shape[1] != layer.c_in:
        raise ValueError(f"deformable conv expects {layer.c_in} channels, got {x.value.shape[1]}")
    offsets, mask = layer.offsets_and_mask(x)
    return F.deform_conv2d(x, layer.weight, offsets, mask)


def normalize(x: Var, kind, eps: float = 1e-5, training: bool = True, running=None, momentum: float = 0.1) -> Var:
    """Parameter-free normalization of an NCHW Var.

    batch: per channel over (N, H, W); instance: per (n, c) over (H, W);
    layer: per sample over (C, H, W); feature: divide by the channel RMS at
    each location.  In eval mode batch norm uses ``running`` statistics.
    """
    kind = NormKind.parse(kind)
    if kind is NormKind.FEATURE:
        return F.feature_norm(x, eps)
    if kind is NormKind.INSTANCE:
        return F.moment_norm(x, (2, 3), eps)[0]
    if kind is NormKind.LAYER:
        return F.moment_norm(x, (1, 2, 3), eps)[0]
    if not training and running:
        return F.affine_norm(x, running["running_mean"], running["running_var"], eps)
    y, mean, var = F.moment_norm(x, (0, 2, 3), eps)
    if training and running:
        count = x.value.size // x.value.shape[1]
        unbiased = var * count / max(count - 1, 1)
        running["running_mean"] *= 1 - momentum
        running["running_mean"] += momentum * mean
        running["running_var"] *= 1 - momentum
        running["running_var"] += momentum * unbiased
    return y


def activation(x: Var, kind: str) -> Var:
    kind = kind.lower()
    if kind == "gelu":
        return F.gelu(x)
    if kind == "relu":
        return F.relu(x)
    if kind == "sigmoid":
        return F.sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def pool(x: Var, kind: str) -> Var:
    if kind == "max3s2p1":
        return F.max_pool(x, 3, 2, 1)
    if kind == "global_avg":
        return F.global_avg_pool(x)
    raise ValueError(f"unknown pooling {kind!r}")


def linear(x: Var, weights: Var, bias: Optional[Var] = None) -> Var:
    return F.linear(x, weights, bias)
