"""Cost accounting, gradCAM saliency and the salient-feature-detection score."""

from __future__ import annotations

import inspect
import io
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import functional as F
from .autodiff import Var, backward
from .layers import CostRow, Module, Sequential

DEFORM_MAC_NOTE = (
    "deformable conv MACs = offset-predictor conv + 9*c_in*c_out*h*w "
    "+ 9 taps * 4 bilinear MACs per input channel per output site"
)


@dataclass
class CostReport:
    rows: List[CostRow] = field(default_factory=list)
    input_size: Optional[Tuple[int, int]] = None
    note: str = DEFORM_MAC_NOTE

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def to_csv(self, totals: bool = True) -> str:
        buf = io.StringIO()
        buf.write("name,params,macs\n")
        for r in self.rows:
            buf.write(f"{r.name},{r.params},{r.macs}\n")
        if totals:
            buf.write(f"total,{self.total_params},{self.total_macs}\n")
        return buf.getvalue()


def count_params(net: Module) -> CostReport:
    """Exact element counts, one row per parameter tensor."""
    rows = [CostRow(name, int(p.value.size), 0) for name, p in net.named_parameters()]
    return CostReport(rows)


def count_macs(net: Module, input_size: Tuple[int, int], in_channels: Optional[int] = None) -> CostReport:
    """Per-layer parameters and multiply-accumulates for a single image.

    Normalization, activation and pooling layers count zero MACs.
    """
    h, w = input_size
    rows: List[CostRow] = []
    if isinstance(net, Sequential) and not net.layers:
        return CostReport(rows, (h, w))
    if in_channels is None:
        in_channels = next((m.c_in for _, m in net.named_modules() if hasattr(m, "c_in")), None)
        if in_channels is None:
            raise ValueError("cannot infer input channels; pass in_channels")
    net.trace((1, in_channels, h, w), rows, "")
    return CostReport(rows, (h, w))


# gradCAM --------------------------------------------------------------------

@dataclass
class SaliencyMap:
    weights: np.ndarray
    layer: str = ""
    class_idx: int = -1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"saliency map must be 2-D, got shape {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ValueError("saliency weights must be finite and non-negative")

    def normalized(self) -> np.ndarray:
        return minmax(self.weights)


def minmax(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi <= lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def resize_bilinear(img: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Half-pixel-centre bilinear resize of a 2-D array, edges clamped."""
    h, w = img.shape
    oh, ow = size

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(h, oh)
    x0, x1, fx = axis(w, ow)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def gradcam_map(activation: np.ndarray, gradient: np.ndarray, size=None) -> np.ndarray:
    """ReLU of the gradient-weighted channel sum of one (c, h, w) activation."""
    weights = gradient.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, activation, axes=(0, 0)), 0.0)
    if size is not None and tuple(size) != cam.shape:
        cam = np.maximum(resize_bilinear(cam, size), 0.0)
    return cam


def grad_cam(net, image, class_idx: int, layer_name: str) -> SaliencyMap:
    """gradCAM heatmap of ``class_idx`` at activation ``layer_name``.

    ``image`` is a single (3, h, w) image or a (1, 3, h, w) batch.  The
    network is switched to eval mode.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[None]
    net.eval()
    record = {}
    logits = net(Var(img), record=record) if _accepts_record(net) else net(Var(img))
    if layer_name not in record:
        raise KeyError(f"unknown layer {layer_name!r}; available: {', '.join(record)}")
    n_classes = logits.value.shape[1]
    if not 0 <= class_idx < n_classes:
        raise IndexError(f"class index {class_idx} out of range for {n_classes} classes")
    act = record[layer_name]
    act.zero_grad()
    if act.requires_grad:
        backward(F.select(logits, (0, class_idx, 0, 0)))
    grad = act.grad[0]
    cam = gradcam_map(act.value[0], grad, img.shape[2:])
    net.zero_grad()
    return SaliencyMap(cam, layer_name, class_idx)


def _accepts_record(net) -> bool:
    return "record" in inspect.signature(net.forward).parameters


# salient feature detection --------------------------------------------------

@dataclass
class RegionMask:
    R: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=bool)
        self.B = np.asarray(self.B, dtype=bool)
        if self.R.shape != self.B.shape:
            raise ValueError(f"R {self.R.shape} and B {self.B.shape} differ in shape")
        if np.any(self.R & ~self.B):
            raise ValueError("R must lie inside B")


@dataclass
class SfdResult:
    score: float
    w_r: float
    w_n: float
    degenerate: bool = False


def sfd_details(saliency, mask: RegionMask) -> SfdResult:
    w = saliency.weights if isinstance(saliency, SaliencyMap) else np.asarray(saliency, dtype=np.float64)
    if w.shape != mask.R.shape:
        raise ValueError(f"map {w.shape} and mask {mask.R.shape} differ in shape")
    if not mask.R.any():
        raise ValueError("region R is empty")
    scaled = np.expm1(minmax(w))
    w_r = float(scaled[mask.R].mean())
    ring = mask.B & ~mask.R
    w_n = float(scaled[ring].mean()) if ring.any() else 0.0
    if w_r + w_n == 0:
        return SfdResult(0.5, w_r, w_n, degenerate=True)
    return SfdResult(w_r / (w_r + w_n), w_r, w_n)


def sfd_score(saliency, mask: RegionMask) -> float:
    """Share of exp-scaled saliency falling on R rather than on B minus R.

    The map is min-max normalized to [0, 1] and each weight becomes
    ``exp(w) - 1`` before averaging.
    """
    res = sfd_details(saliency, mask)
    if res.degenerate:
        warnings.warn("sfd: no saliency on R or B - R; returning 0.5", RuntimeWarning, stacklevel=2)
    return res.score


def infer_B(saliency, R, threshold: float) -> RegionMask:
    """Bounding box of R together with every pixel at or above ``threshold``."""
    if not 0 <= threshold <= 1:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    w = saliency.weights if isinstance(saliency, SaliencyMap) else np.asarray(saliency, dtype=np.float64)
    R = np.asarray(R, dtype=bool)
    keep = R | (minmax(w) >= threshold)
    ys, xs = np.nonzero(keep)
    B = np.zeros_like(R)
    if ys.size:
        B[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1] = True
    return RegionMask(R, B)
