import numpy as np
import pytest

from helpers.autodiff import Tensor, concat


def numeric_grad(f, x, eps=1e-6):
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[index] += eps
        down[index] -= eps
        grad[index] = (f(up) - f(down)) / (2 * eps)
    return grad


def check(op, *shapes, seed=0):
    rng = np.random.default_rng(seed)
    values = [rng.normal(size=shape) for shape in shapes]
    tensors = [Tensor(v, requires_grad=True) for v in values]
    op(*tensors).sum().backward()
    for k, (tensor, value) in enumerate(zip(tensors, values)):

        def f(x):
            args = [Tensor(v) for v in values]
            args[k] = Tensor(x)
            return float(op(*args).sum().data)

        assert tensor.grad == pytest.approx(numeric_grad(f, value), rel=1e-5, abs=1e-7)


def test_broadcast_add_and_mul():
    check(lambda a, b: a + b, (3, 4), (4,))
    check(lambda a, b: a * b, (2, 3, 4), (3, 1))
    check(lambda a, b: a - b, (2, 3), (2, 3))


def test_batched_matmul_and_swapaxes():
    check(lambda a, b: a @ b.swapaxes(), (2, 3, 4), (5, 4))


def test_reshape_getitem_concat_pad():
    check(lambda a: a.reshape(6, 2)[1:4] * 2.0, (3, 4))
    check(lambda a, b: concat([a, b], axis=-1) * concat([b, a], axis=-1), (2, 3), (2, 3))
    check(lambda a: a.pad_last(3) * a.pad_last(3), (2, 5))


def test_activations():
    check(lambda a: a.leaky_relu(0.2) * a, (4, 5))
    check(lambda a: a.relu() * a, (4, 5), seed=1)


def test_softmax_weighted_sum():
    weights = np.arange(12.0).reshape(3, 4)
    check(lambda a: a.softmax(axis=-1) * weights, (3, 4))
    y = Tensor(np.random.default_rng(2).normal(size=(3, 4))).softmax(axis=-1).data
    assert y.sum(axis=-1) == pytest.approx(np.ones(3), abs=1e-12)


def test_mean_and_shared_nodes():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    y = (x * x + x).mean()
    y.backward()
    assert x.grad == pytest.approx((2 * x.data + 1) / 3)


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        Tensor(np.ones(3), requires_grad=True).backward()


def test_constants_get_no_gradient():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(2))
    (a * b).sum().backward()
    assert b.grad is None
    assert a.grad.tolist() == [1.0, 1.0]
