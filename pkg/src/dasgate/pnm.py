"""Netpbm image, mask and heatmap files (PPM / PGM / PBM) plus raw CSV maps."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .analysis import minmax


def read_ppm(path) -> np.ndarray:
    """RGB image as a (3, h, w) float array in [0, 1]."""
    with Image.open(os.fspath(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1).copy()


def read_mask(path) -> np.ndarray:
    """Boolean mask from a PGM (nonzero = inside) or PBM (black = inside)."""
    with Image.open(os.fspath(path)) as im:
        if im.mode == "1":
            return ~np.asarray(im, dtype=bool)
        return np.asarray(im.convert("L")) > 0


def write_pgm(path, weights: np.ndarray) -> None:
    """Binary 8-bit PGM, min-max scaled to 0..255."""
    img = np.round(minmax(weights) * 255).astype(np.uint8)
    Image.fromarray(img).save(os.fspath(path), format="PPM")


def write_map_csv(path, weights: np.ndarray) -> None:
    np.savetxt(os.fspath(path), np.asarray(weights, dtype=np.float64), delimiter=",", fmt="%.10g")


def read_heatmap(path) -> np.ndarray:
    p = os.fspath(path)
    if p.lower().endswith(".csv"):
        return np.atleast_2d(np.loadtxt(p, delimiter=","))
    with Image.open(p) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
