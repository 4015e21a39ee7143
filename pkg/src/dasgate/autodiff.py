"""Tape-based reverse-mode differentiation over numpy arrays.

A :class:`Var` remembers the parents it was computed from and a closure
mapping its output gradient to per-parent gradients.  Node ids grow
monotonically as values are created, so sorting the reachable nodes by
descending id is a valid reverse topological order and also fixes the
accumulation order run to run.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

_ids = itertools.count()

_grad_enabled = True


class no_grad:
    """Context manager that stops recording parents inside its block."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Var:
    """A differentiable value.

    Parameters and inputs are leaves (no parents).  ``grad`` is allocated
    lazily and always matches ``value`` in shape.
    """

    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.id = next(_ids)
        self._grad: Optional[np.ndarray] = None
        self._parents: Tuple["Var", ...] = ()
        self._backward: Optional[Callable] = None

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g) -> None:
        self._grad = np.asarray(g, dtype=np.float64)

    def zero_grad(self) -> None:
        self._grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    def detach(self) -> "Var":
        return Var(self.value, requires_grad=False)

    # arithmetic ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def sum(self):
        return sum_all(self)


def _wrap(v) -> Var:
    return v if isinstance(v, Var) else Var(v)


def make_op(value: np.ndarray, parents: Sequence[Var], backward_fn: Callable) -> Var:
    """Record a new node.

    ``backward_fn(grad_out)`` must return one gradient (or None) per parent,
    in order.  Nothing is recorded when no parent needs a gradient or when
    recording is disabled.
    """
    out = Var(value)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def topological_order(root: Var) -> list:
    """Nodes reachable from ``root`` that need gradients, newest first."""
    seen = {}
    stack = [root]
    while stack:
        v = stack.pop()
        if v.id in seen or not v.requires_grad:
            continue
        seen[v.id] = v
        stack.extend(v._parents)
    return [seen[i] for i in sorted(seen, reverse=True)]


def backward(loss: Var) -> None:
    """Accumulate d(loss)/d(v) into ``v.grad`` for every reachable ``v``."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    pending = {loss.id: np.ones_like(loss.value)}
    for node in topological_order(loss):
        g = pending.pop(node.id, None)
        if g is None:
            continue
        node._grad = g.copy() if node._grad is None else node._grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = _unbroadcast(np.asarray(pg, dtype=np.float64), parent.value.shape)
            if parent.id in pending:
                pending[parent.id] = pending[parent.id] + pg
            else:
                pending[parent.id] = pg


# elementwise primitives ------------------------------------------------------

def add(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    return make_op(a.value + b.value, (a, b), lambda g: (g, g))


def neg(a: Var) -> Var:
    return make_op(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    return make_op(av * bv, (a, b), lambda g: (g * bv, g * av))


def sum_all(a: Var) -> Var:
    shape = a.value.shape
    return make_op(
        np.array(a.value.sum()).reshape((1,) * max(len(shape), 1)),
        (a,),
        lambda g: (np.broadcast_to(g.reshape(()), shape),),
    )


def mean_all(a: Var) -> Var:
    return mul(sum_all(a), 1.0 / a.value.size)


def sum_weighted(a: Var, weights: np.ndarray) -> Var:
    """``sum(a * weights)`` for a constant weight array; a handy test loss."""
    w = np.asarray(weights, dtype=np.float64)
    shape = a.value.shape
    return make_op(
        np.array((a.value * w).sum()).reshape((1,) * len(shape)),
        (a,),
        lambda g: (g.reshape(()) * w,),
    )


# gradient verification -------------------------------------------------------

def _relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / scale


def finite_diff_check(
    f: Callable[[Var], Var],
    point,
    epsilon: float = 1e-6,
    tol: float = 1e-3,
    coords: Optional[Iterable[int]] = None,
) -> Tuple[float, bool]:
    """Compare autodiff gradients of ``f`` at ``point`` to central differences.

    ``coords`` restricts the check to a subset of flat indices.  Returns the
    worst relative error and whether it is below ``tol``.
    """
    if not 0 < epsilon <= 1e-2:
        raise ValueError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    x0 = np.array(point, dtype=np.float64)
    v = Var(x0.copy(), requires_grad=True)
    out = f(v)
    backward(out)
    analytic = v.grad.ravel()
    idx = range(x0.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        xp = x0.copy().ravel()
        xm = x0.copy().ravel()
        xp[i] += epsilon
        xm[i] -= epsilon
        with no_grad():
            fp = float(f(Var(xp.reshape(x0.shape))).value.sum())
            fm = float(f(Var(xm.reshape(x0.shape))).value.sum())
        numeric = (fp - fm) / (2 * epsilon)
        worst = max(worst, float(_relative_errors(np.array(analytic[i]), np.array(numeric))))
    return worst, worst < tol


def check_param_grads(
    loss_fn: Callable[[], Var],
    params: Sequence[Var],
    epsilon: float = 1e-6,
    tol: float = 1e-3,
    fraction: float = 1.0,
    rng: Optional[np.random.Generator] = None,
    min_per_param: int = 1,
) -> Tuple[float, bool]:
    """Finite-difference check of ``loss_fn`` against parameter gradients.

    Parameters are perturbed in place and restored.  With ``fraction < 1``
    a random subset of coordinates (at least ``min_per_param`` per tensor)
    is checked.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    worst = 0.0
    for p in params:
        analytic = p.grad.ravel().copy()
        size = p.value.size
        if fraction >= 1.0:
            chosen = np.arange(size)
        else:
            k = min(size, max(min_per_param, int(round(fraction * size))))
            chosen = np.sort(rng.choice(size, size=k, replace=False))
        flat = p.value.reshape(-1)
        for i in chosen:
            orig = flat[i]
            flat[i] = orig + epsilon
            with no_grad():
                fp = float(loss_fn().value.sum())
            flat[i] = orig - epsilon
            with no_grad():
                fm = float(loss_fn().value.sum())
            flat[i] = orig
            numeric = (fp - fm) / (2 * epsilon)
            worst = max(worst, float(_relative_errors(np.array(analytic[i]), np.array(numeric))))
    return worst, worst < tol
