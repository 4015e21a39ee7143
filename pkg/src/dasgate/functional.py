"""Differentiable tensor operations.

Each function takes and returns :class:`~dasgate.autodiff.Var` objects and
records a backward rule on the tape.  Forward values come from the
reference kernels in :mod:`dasgate.tensor` where one exists.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from .autodiff import Var, make_op, _wrap
from .tensor import col2im, conv2d_ref, im2col, _check_conv_args

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# convolution -----------------------------------------------------------------

def conv2d(x: Var, w: Var, stride: int = 1, pad: int = 0, groups: int = 1) -> Var:
    xv, wv = x.value, w.value
    _check_conv_args(xv, wv, stride, pad, groups)
    out = conv2d_ref(xv, wv, stride, pad, groups)
    n, c = xv.shape[:2]
    c_out, cpg, k, _ = wv.shape
    ho, wo = out.shape[2], out.shape[3]

    def backward(g):
        cols = im2col(xv, k, stride, pad)
        g2 = g.reshape(n, groups, c_out // groups, ho * wo)
        c2 = cols.reshape(n, groups, cpg * k * k, ho * wo)
        w2 = wv.reshape(groups, c_out // groups, cpg * k * k)
        dx = dw = None
        if w.requires_grad:
            dw = np.einsum("ngop,ngkp->gok", g2, c2, optimize=True).reshape(wv.shape)
        if x.requires_grad:
            dcols = np.matmul(w2.transpose(0, 2, 1), g2)
            dx = col2im(dcols.reshape(n, c, k, k, ho, wo), xv.shape, stride, pad)
        return dx, dw

    return make_op(out, (x, w), backward)


class _BilinearGather:
    """Zero-padded bilinear sampling of every channel at shared locations.

    ``py``/``px`` have shape (n, P): one set of P real-valued pixel
    coordinates per batch item, applied to all channels.  Keeps the corner
    data needed to push gradients back to the image and to the coordinates.
    """

    def __init__(self, x: np.ndarray, py: np.ndarray, px: np.ndarray):
        n, c, h, w = x.shape
        self.shape = x.shape
        y0 = np.floor(py)
        x0 = np.floor(px)
        self.ly = py - y0
        self.lx = px - x0
        y0 = y0.astype(np.int64)
        x0 = x0.astype(np.int64)
        xf = x.reshape(n, c, h * w)
        self.idx = []
        self.vals = []
        for dy in (0, 1):
            for dx in (0, 1):
                yy, xx = y0 + dy, x0 + dx
                valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
                flat = np.where(valid, yy * w + xx, 0)
                v = np.take_along_axis(xf, flat[:, None, :].repeat(c, axis=1), axis=2)
                v = v * valid[:, None, :]
                self.idx.append((flat, valid))
                self.vals.append(v)

    def corner_weights(self):
        ly, lx = self.ly, self.lx
        return ((1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx)

    def sample(self) -> np.ndarray:
        """Interpolated values, shape (n, c, P)."""
        out = np.zeros_like(self.vals[0])
        for wt, v in zip(self.corner_weights(), self.vals):
            out += wt[:, None, :] * v
        return out

    def grad_input(self, g: np.ndarray) -> np.ndarray:
        """Scatter ``g`` (n, c, P) back onto the image grid."""
        n, c, h, w = self.shape
        base = (np.arange(n)[:, None, None] * c + np.arange(c)[None, :, None]) * (h * w)
        total = np.zeros(n * c * h * w)
        for wt, (flat, valid) in zip(self.corner_weights(), self.idx):
            contrib = g * (wt * valid)[:, None, :]
            total += np.bincount(
                (base + flat[:, None, :]).ravel(), weights=contrib.ravel(), minlength=n * c * h * w
            )
        return total.reshape(self.shape)

    def grad_coords(self, g: np.ndarray):
        """Gradients with respect to ``py`` and ``px``, each (n, P)."""
        v00, v01, v10, v11 = self.vals
        ly, lx = self.ly[:, None, :], self.lx[:, None, :]
        dsy = (1 - lx) * (v10 - v00) + lx * (v11 - v01)
        dsx = (1 - ly) * (v01 - v00) + ly * (v11 - v10)
        return (g * dsy).sum(axis=1), (g * dsx).sum(axis=1)


def grid_sample(x: Var, flow: Var) -> Var:
    """Resample ``x`` at the identity grid displaced by ``flow``.

    ``flow`` has shape (n, 2, h, w) holding (dy, dx) pixel displacements;
    the output has the shape of ``x``.
    """
    xv, fv = x.value, flow.value
    n, c, h, w = xv.shape
    if fv.shape != (n, 2, h, w):
        raise ValueError(f"flow must have shape {(n, 2, h, w)}, got {fv.shape}")
    gy, gx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    py = (gy[None] + fv[:, 0]).reshape(n, h * w)
    px = (gx[None] + fv[:, 1]).reshape(n, h * w)
    s = _BilinearGather(xv, py, px)
    out = s.sample().reshape(n, c, h, w)

    def backward(g):
        g = g.reshape(n, c, h * w)
        dx = s.grad_input(g) if x.requires_grad else None
        dflow = None
        if flow.requires_grad:
            dy, dxc = s.grad_coords(g)
            dflow = np.stack([dy.reshape(n, h, w), dxc.reshape(n, h, w)], axis=1)
        return dx, dflow

    return make_op(out, (x, flow), backward)


def deform_conv2d(x: Var, w: Var, offsets: Var, mask: Var) -> Var:
    """Modulated deformable convolution, stride 1, 'same' padding.

    ``w``: (c_out, c_in, k, k).  ``offsets``: (n, 2*k*k, h, w) ordered tap by
    tap as (dy, dx) pairs, taps in row-major kernel order.  ``mask``:
    (n, k*k, h, w) per-tap modulation shared across output channels.
    Output site p sums w[:, :, tap] * mask[tap] * x(p + tap offset + offset).
    """
    xv, wv, ov, mv = x.value, w.value, offsets.value, mask.value
    n, c, h, wd = xv.shape
    c_out, c_in, k, k2 = wv.shape
    K = k * k
    if c != c_in or k != k2 or k % 2 == 0:
        raise ValueError(f"deform_conv2d: input {xv.shape} incompatible with weights {wv.shape}")
    if ov.shape != (n, 2 * K, h, wd):
        raise ValueError(f"offsets must have shape {(n, 2 * K, h, wd)}, got {ov.shape}")
    if mv.shape != (n, K, h, wd):
        raise ValueError(f"mask must have shape {(n, K, h, wd)}, got {mv.shape}")
    r = k // 2
    taps = np.array([(i - r, j - r) for i in range(k) for j in range(k)], dtype=np.float64)
    gy, gx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(wd, dtype=np.float64), indexing="ij")
    off = ov.reshape(n, K, 2, h, wd)
    py = (gy[None, None] + taps[None, :, 0, None, None] + off[:, :, 0]).reshape(n, K * h * wd)
    px = (gx[None, None] + taps[None, :, 1, None, None] + off[:, :, 1]).reshape(n, K * h * wd)
    s = _BilinearGather(xv, py, px)
    sampled = s.sample().reshape(n, c, K, h * wd)
    m = mv.reshape(n, 1, K, h * wd)
    cols = (sampled * m).reshape(n, c * K, h * wd)
    w2 = wv.reshape(c_out, c * K)
    out = np.matmul(w2, cols).reshape(n, c_out, h, wd)

    def backward(g):
        g2 = g.reshape(n, c_out, h * wd)
        dw = None
        if w.requires_grad:
            dw = np.einsum("nop,nkp->ok", g2, cols, optimize=True).reshape(wv.shape)
        dcols = np.matmul(w2.T, g2).reshape(n, c, K, h * wd)
        dmask = (dcols * sampled).sum(axis=1).reshape(mv.shape) if mask.requires_grad else None
        dsamp = (dcols * m).reshape(n, c, K * h * wd)
        dx = s.grad_input(dsamp) if x.requires_grad else None
        doff = None
        if offsets.requires_grad:
            dy, dxc = s.grad_coords(dsamp)
            doff = np.stack(
                [dy.reshape(n, K, h, wd), dxc.reshape(n, K, h, wd)], axis=2
            ).reshape(ov.shape)
        return dx, dw, doff, dmask

    return make_op(out, (x, w, offsets, mask), backward)


# shape plumbing --------------------------------------------------------------

def concat(parts: Sequence[Var], axis: int = 1) -> Var:
    vals = [p.value for p in parts]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parts))
        )

    return make_op(out, tuple(parts), backward)


def channel_slice(x: Var, start: int, stop: int) -> Var:
    xv = x.value

    def backward(g):
        full = np.zeros_like(xv)
        full[:, start:stop] = g
        return (full,)

    return make_op(np.ascontiguousarray(xv[:, start:stop]), (x,), backward)


def select(x: Var, index) -> Var:
    """Pick a single element as a (1, 1, 1, 1) scalar."""
    xv = x.value

    def backward(g):
        full = np.zeros_like(xv)
        full[index] = g.reshape(())
        return (full,)

    return make_op(np.array(xv[index], dtype=np.float64).reshape(1, 1, 1, 1), (x,), backward)


# activations -----------------------------------------------------------------

def relu(x: Var) -> Var:
    pos = x.value > 0
    return make_op(np.where(pos, x.value, 0.0), (x,), lambda g: (g * pos,))


def sigmoid(x: Var) -> Var:
    v = x.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    s = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def gelu(x: Var) -> Var:
    v = x.value
    cdf = 0.5 * (1.0 + erf(v / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * v * v)
    return make_op(v * cdf, (x,), lambda g: (g * (cdf + v * pdf),))


# normalization ---------------------------------------------------------------

def moment_norm(x: Var, axes, eps: float = 1e-5):
    """(x - mean) / sqrt(var + eps) over ``axes`` using batch statistics.

    Returns the output Var plus the mean and variance used.
    """
    xv = x.value
    mean = xv.mean(axis=axes, keepdims=True)
    xc = xv - mean
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xhat).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return make_op(xhat, (x,), backward), mean, var


def affine_norm(x: Var, mean: np.ndarray, var: np.ndarray, eps: float = 1e-5) -> Var:
    """Normalize with fixed statistics (batch-norm inference)."""
    inv = 1.0 / np.sqrt(var + eps)
    return make_op((x.value - mean) * inv, (x,), lambda g: (g * inv,))


def feature_norm(x: Var, eps: float = 1e-5) -> Var:
    """Divide every spatial location by the RMS of its channel vector."""
    xv = x.value
    c = xv.shape[1]
    rms = np.sqrt((xv * xv).mean(axis=1, keepdims=True))
    denom = rms + eps
    out = xv / denom

    def backward(g):
        gx = (g * xv).sum(axis=1, keepdims=True)
        safe = np.where(rms > 0, rms, 1.0)
        corr = np.where(rms > 0, gx / (denom * denom * c * safe), 0.0)
        return (g / denom - xv * corr,)

    return make_op(out, (x,), backward)


# pooling ---------------------------------------------------------------------

def max_pool(x: Var, k: int = 3, stride: int = 2, pad: int = 1) -> Var:
    xv = x.value
    n, c, h, w = xv.shape
    xp = np.pad(xv, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    cols = im2col(xp, k, stride, 0)  # (n, c, k, k, ho, wo)
    ho, wo = cols.shape[4], cols.shape[5]
    flat = cols.reshape(n, c, k * k, ho, wo)
    arg = flat.argmax(axis=2)
    out = np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]

    def backward(g):
        dcols = np.zeros((n, c, k * k, ho, wo))
        np.put_along_axis(dcols, arg[:, :, None], g[:, :, None], axis=2)
        dxp = col2im(dcols.reshape(n, c, k, k, ho, wo), xp.shape, stride, 0)
        return (dxp[:, :, pad : pad + h, pad : pad + w],)

    return make_op(out, (x,), backward)


def global_avg_pool(x: Var) -> Var:
    xv = x.value
    hw = xv.shape[2] * xv.shape[3]
    out = xv.mean(axis=(2, 3), keepdims=True)
    return make_op(out, (x,), lambda g: (np.broadcast_to(g / hw, xv.shape),))


# head and loss ---------------------------------------------------------------

def linear(x: Var, w: Var, b: Optional[Var] = None) -> Var:
    """(n, f, 1, 1) -> (n, classes, 1, 1) with weights (classes, f)."""
    xv, wv = x.value, w.value
    if xv.ndim != 4 or xv.shape[2:] != (1, 1):
        raise ValueError(f"linear expects input of shape (n, features, 1, 1), got {xv.shape}")
    if wv.shape[1] != xv.shape[1]:
        raise ValueError(f"linear: {xv.shape[1]} input features but weights are {wv.shape}")
    if b is not None and b.value.shape != (wv.shape[0],):
        raise ValueError(f"linear: bias shape {b.value.shape} does not match {wv.shape[0]} outputs")
    flat = xv[:, :, 0, 0]
    out = flat @ wv.T
    if b is not None:
        out = out + b.value
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g[:, :, 0, 0]
        grads = [(g2 @ wv)[:, :, None, None], g2.T @ flat]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return make_op(out[:, :, None, None], parents, backward)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits: Var, labels) -> Var:
    """Mean negative log-likelihood of integer ``labels``."""
    lv = logits.value.reshape(logits.value.shape[0], -1)
    y = np.asarray(labels, dtype=np.int64)
    n = lv.shape[0]
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    lsm = log_softmax(lv)
    loss = -lsm[np.arange(n), y].mean()

    def backward(g):
        p = np.exp(lsm)
        p[np.arange(n), y] -= 1.0
        return ((g.reshape(()) / n) * p.reshape(logits.value.shape),)

    return make_op(np.array(loss).reshape(1, 1, 1, 1), (logits,), backward)


def scale(x: Var, factor: float) -> Var:
    return make_op(x.value * factor, (x,), lambda g: (g * factor,))


def multiply(a: Var, b: Var) -> Var:
    return _wrap(a) * _wrap(b)
