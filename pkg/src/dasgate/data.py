"""Datasets: the CIFAR-100 binary format and a synthetic shapes generator."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

RECORD_BYTES = 3074
CIFAR100_MEAN = (0.5071, 0.4865, 0.4409)
CIFAR100_STD = (0.2673, 0.2564, 0.2762)

SHAPES = (
    "square", "disk", "triangle", "plus", "ring",
    "hbar", "vbar", "diamond", "cross", "frame",
)


@dataclass
class DatasetSpec:
    kind: str = "synthetic"
    path: Optional[str] = None
    n_classes: int = 3
    n_samples: int = 300
    image_size: int = 32


def load_cifar100(path, mean=CIFAR100_MEAN, std=CIFAR100_STD) -> Tuple[np.ndarray, np.ndarray]:
    """Read a CIFAR-100 binary file into standardized (n, 3, 32, 32) images.

    Records are 1 coarse label byte, 1 fine label byte and 3072 CHW RGB
    bytes.  Fine labels are returned.
    """
    raw = np.fromfile(os.fspath(path), dtype=np.uint8)
    n, rem = divmod(raw.size, RECORD_BYTES)
    if rem:
        raise ValueError(
            f"{path}: truncated record at byte offset {n * RECORD_BYTES} "
            f"({rem} of {RECORD_BYTES} bytes present)"
        )
    rec = raw.reshape(n, RECORD_BYTES)
    labels = rec[:, 1].astype(np.int64)
    bad = np.nonzero(labels >= 100)[0]
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"{path}: fine label {labels[i]} >= 100 at byte offset {i * RECORD_BYTES + 1}")
    images = rec[:, 2:].reshape(n, 3, 32, 32).astype(np.float64) / 255.0
    m = np.asarray(mean, dtype=np.float64).reshape(1, 3, 1, 1)
    s = np.asarray(std, dtype=np.float64).reshape(1, 3, 1, 1)
    return (images - m) / s, labels


def _shape_mask(kind: str, size: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    t = max(1.0, r / 3)
    if kind == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if kind == "disk":
        return dy ** 2 + dx ** 2 <= r ** 2
    if kind == "triangle":
        return (dy <= r) & (dy >= -r) & (np.abs(dx) <= (dy + r) / 2)
    if kind == "plus":
        return ((np.abs(dy) <= t) & (np.abs(dx) <= r)) | ((np.abs(dx) <= t) & (np.abs(dy) <= r))
    if kind == "ring":
        d = np.sqrt(dy ** 2 + dx ** 2)
        return (d <= r) & (d >= r - t)
    if kind == "hbar":
        return (np.abs(dy) <= t) & (np.abs(dx) <= r)
    if kind == "vbar":
        return (np.abs(dx) <= t) & (np.abs(dy) <= r)
    if kind == "diamond":
        return np.abs(dy) + np.abs(dx) <= r
    if kind == "cross":
        return (np.abs(np.abs(dy) - np.abs(dx)) <= t) & (np.abs(dy) <= r)
    if kind == "frame":
        inside = (np.abs(dy) <= r) & (np.abs(dx) <= r)
        return inside & ~((np.abs(dy) <= r - t) & (np.abs(dx) <= r - t))
    raise ValueError(f"unknown shape {kind!r}")


def gen_synthetic(spec: DatasetSpec, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Colored shapes on a noisy background; the class is the shape type.

    Classes are balanced by construction (sample i has class i mod k before
    a seeded shuffle).  Pixel values lie in [0, 1].
    """
    k = spec.n_classes
    if not 2 <= k <= len(SHAPES):
        raise ValueError(f"n_classes must be in [2, {len(SHAPES)}], got {k}")
    rng = np.random.default_rng(seed)
    size = spec.image_size
    labels = np.arange(spec.n_samples) % k
    rng.shuffle(labels)
    images = np.empty((spec.n_samples, 3, size, size))
    for i, lab in enumerate(labels):
        img = rng.uniform(0.0, 0.35, size=(3, size, size))
        r = rng.uniform(0.18, 0.32) * size
        cy, cx = rng.uniform(r, size - 1 - r, size=2)
        color = rng.uniform(0.55, 1.0, size=3)
        mask = _shape_mask(SHAPES[lab], size, cy, cx, r)
        img[:, mask] = color[:, None]
        images[i] = img
    return images, labels.astype(np.int64)


def augment_flip_crop(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random horizontal flip plus random crop from a zero-padded copy."""
    n, c, h, w = images.shape
    flip = rng.random(n) < 0.5
    out = np.where(flip[:, None, None, None], images[..., ::-1], images)
    padded = np.pad(out, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oy = rng.integers(0, 2 * pad + 1, size=n)
    ox = rng.integers(0, 2 * pad + 1, size=n)
    return np.stack([padded[i, :, oy[i] : oy[i] + h, ox[i] : ox[i] + w] for i in range(n)])


def load_dataset(spec: DatasetSpec, seed: int = 0):
    if spec.kind == "cifar100":
        if not spec.path:
            raise ValueError("cifar100 dataset needs data.path")
        return load_cifar100(spec.path)
    if spec.kind == "synthetic":
        return gen_synthetic(spec, seed)
    raise ValueError(f"unknown dataset kind {spec.kind!r}")
