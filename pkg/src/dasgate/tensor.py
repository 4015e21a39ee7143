"""Dense NCHW float64 arrays and the reference kernels built on them.

Every tensor in the package is a 4-D ``numpy.ndarray`` of dtype float64
laid out as (batch, channel, height, width).  The functions here are the
non-differentiable references: the autodiff layer wraps them, and tests
compare against them.
"""

from __future__ import annotations

import math
from typing import Iterable, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

AXIS_INDEX = {"N": 0, "C": 1, "H": 2, "W": 3}


def as_tensor(data, ndim: int = 4) -> np.ndarray:
    """Coerce ``data`` to a C-contiguous float64 array with ``ndim`` axes."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D tensor, got shape {arr.shape}")
    return arr


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    out = (size + 2 * pad - k) // stride + 1
    if out <= 0:
        raise ValueError(
            f"convolution output size is {out} for input {size}, kernel {k}, "
            f"stride {stride}, pad {pad}"
        )
    return out


def _check_conv_args(x: np.ndarray, w: np.ndarray, stride: int, pad: int, groups: int):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weights, got {x.shape} and {w.shape}")
    c_out, c_in_pg, kh, kw = w.shape
    if kh != kw:
        raise ValueError(f"only square kernels are supported, got {kh}x{kw}")
    if groups < 1 or x.shape[1] % groups or c_out % groups:
        raise ValueError(f"groups={groups} must divide c_in={x.shape[1]} and c_out={c_out}")
    if c_in_pg * groups != x.shape[1]:
        raise ValueError(
            f"input has {x.shape[1]} channels but weights expect {c_in_pg * groups} "
            f"({c_in_pg} per group x {groups} groups)"
        )
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Unfold ``x`` into patches of shape (n, c, k, k, h_out, w_out)."""
    n, c, h, w = x.shape
    ho = conv_output_size(h, k, stride, pad)
    wo = conv_output_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (n, c, ho, wo, k, k) -> (n, c, k, k, ho, wo)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))


def col2im(cols: np.ndarray, x_shape, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patches back onto the input grid."""
    n, c, h, w = x_shape
    k = cols.shape[2]
    ho, wo = cols.shape[4], cols.shape[5]
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def conv2d_ref(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0, groups: int = 1) -> np.ndarray:
    """Bias-free 2-D cross-correlation with zero padding.

    ``w`` has shape (c_out, c_in // groups, k, k).  Grouped kernels split
    input and output channels into ``groups`` independent blocks, so
    ``groups == c_in`` gives a depthwise convolution.
    """
    _check_conv_args(x, w, stride, pad, groups)
    n, c = x.shape[:2]
    c_out, cpg, k, _ = w.shape
    cols = im2col(x, k, stride, pad)
    ho, wo = cols.shape[4], cols.shape[5]
    if groups == 1:
        out = np.matmul(w.reshape(c_out, -1), cols.reshape(n, c * k * k, ho * wo))
    else:
        g_cols = cols.reshape(n, groups, cpg * k * k, ho * wo)
        g_w = w.reshape(groups, c_out // groups, cpg * k * k)
        out = np.matmul(g_w, g_cols)
    return out.reshape(n, c_out, ho, wo)


def bilinear_sample(x: np.ndarray, coords: Tuple[float, float], n: int, c: int) -> float:
    """Sample channel ``(n, c)`` of ``x`` at real-valued pixel coordinates.

    (0, 0) is the centre of the top-left pixel.  Neighbours that fall
    outside the image contribute zero.
    """
    if not (0 <= n < x.shape[0] and 0 <= c < x.shape[1]):
        raise IndexError(f"(n={n}, c={c}) out of range for tensor of shape {x.shape}")
    y, xc = coords
    h, w = x.shape[2], x.shape[3]
    y0, x0 = math.floor(y), math.floor(xc)
    ly, lx = y - y0, xc - x0
    total = 0.0
    for dy, wy in ((0, 1.0 - ly), (1, ly)):
        for dx, wx in ((0, 1.0 - lx), (1, lx)):
            yy, xx = y0 + dy, x0 + dx
            if 0 <= yy < h and 0 <= xx < w:
                total += wy * wx * float(x[n, c, yy, xx])
    return total


def _axes_tuple(axes: Iterable) -> Tuple[int, ...]:
    out = []
    for a in axes:
        if isinstance(a, str):
            if a.upper() not in AXIS_INDEX:
                raise ValueError(f"unknown axis {a!r}; expected one of N, C, H, W")
            out.append(AXIS_INDEX[a.upper()])
        else:
            if not 0 <= int(a) < 4:
                raise ValueError(f"axis {a} out of range for a 4-D tensor")
            out.append(int(a))
    return tuple(sorted(set(out)))


def reduce_moments(x: np.ndarray, axes) -> Tuple[np.ndarray, np.ndarray]:
    """Population mean and variance over ``axes``, kept broadcastable to ``x``.

    ``axes`` is any iterable of axis letters (``"NHW"``, ``{"C", "H", "W"}``)
    or integer positions.
    """
    ax = _axes_tuple(axes)
    if not ax:
        raise ValueError("reduce_moments needs at least one axis")
    count = 1
    for a in ax:
        count *= x.shape[a]
    if count == 0:
        raise ValueError(f"empty reduction extent over axes {ax} of shape {x.shape}")
    mean = x.mean(axis=ax, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=ax, keepdims=True)
    return mean, var
