import numpy as np
import pytest

from dasgate import functional as F
from dasgate.autodiff import (
    Var, backward, finite_diff_check, make_op, mul, no_grad, sum_all, topological_order,
)


def test_identity_and_square():
    x = Var(np.array(3.0), requires_grad=True)
    backward(x)
    assert x.grad == 1.0
    x = Var(np.array(3.0), requires_grad=True)
    backward(x * x)
    assert x.grad == 6.0


def test_sigmoid_slope_at_zero():
    x = Var(np.zeros((2, 3, 4, 4)), requires_grad=True)
    backward(sum_all(F.sigmoid(x)))
    assert np.all(x.grad == 0.25)


def test_non_scalar_loss_rejected():
    x = Var(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * 2.0)


def test_second_backward_doubles(rng):
    w = Var(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
    x = Var(rng.normal(size=(1, 3, 5, 5)), requires_grad=True)
    loss = sum_all(F.gelu(F.conv2d(x, w, pad=1)))
    backward(loss)
    g1w, g1x = w.grad.copy(), x.grad.copy()
    backward(loss)
    assert np.array_equal(w.grad, 2 * g1w) and np.array_equal(x.grad, 2 * g1x)


def test_detached_gets_no_grad(rng):
    w = Var(rng.normal(size=(2, 2, 3, 3)), requires_grad=True)
    frozen = Var(rng.normal(size=(2, 2, 3, 3)))
    x = Var(rng.normal(size=(1, 2, 4, 4)))
    backward(sum_all(F.conv2d(F.conv2d(x, frozen, pad=1), w, pad=1)))
    assert np.all(frozen.grad == 0) and np.any(w.grad != 0)
    d = w.detach()
    assert not d.requires_grad and np.array_equal(d.value, w.value)


def test_grad_shape_matches_value(rng):
    x = Var(rng.normal(size=(2, 3, 4, 5)), requires_grad=True)
    backward(sum_all(F.relu(x)))
    assert x.grad.shape == x.value.shape


def test_topological_order_visits_once():
    x = Var(np.array(2.0), requires_grad=True)
    y = x * x
    z = y + y
    order = topological_order(z)
    assert len(order) == len({id(v) for v in order})
    assert order.index(z) < order.index(y)


def test_no_grad_records_nothing():
    x = Var(np.array(2.0), requires_grad=True)
    with no_grad():
        y = x * x
    assert not y.requires_grad


def test_fd_square(rng):
    err, ok = finite_diff_check(lambda v: sum_all(v * v), rng.normal(size=(3, 4)))
    assert ok and err < 1e-6


def test_fd_constant():
    err, ok = finite_diff_check(lambda v: sum_all(v * 0.0), np.ones(5))
    assert ok and err == 0.0


def test_fd_detects_corrupted_rule(rng):
    def bad_square(v):
        return make_op(v.value ** 2, [v], lambda g: (3.0 * v.value * g,))

    _, ok = finite_diff_check(lambda v: sum_all(bad_square(v)), rng.normal(size=6))
    assert not ok


def test_fd_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        finite_diff_check(lambda v: sum_all(v), np.ones(2), epsilon=0.1)


def test_mul_broadcast_grad(rng):
    a = Var(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
    b = Var(rng.normal(size=(1, 3, 1, 1)), requires_grad=True)
    backward(sum_all(mul(a, b)))
    np.testing.assert_allclose(b.grad, a.value.sum(axis=(0, 2, 3), keepdims=True))
