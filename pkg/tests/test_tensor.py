import numpy as np
import pytest

from usamnet import ops
from usamnet.errors import UsageError
from usamnet.tensor import Tensor, backward, default_dtype, float64_mode, no_grad


def test_default_dtype_is_float32_and_float64_mode_switches():
    assert Tensor([1.0]).dtype == np.float32
    with float64_mode():
        assert Tensor([1.0]).dtype == np.float64
    assert default_dtype() == np.float32


def test_constructor_copies_and_rejects_non_finite():
    src = np.ones(3, np.float32)
    t = Tensor(src)
    src[0] = 5
    assert t.data[0] == 1
    with pytest.raises(UsageError):
        Tensor([1.0, np.nan])
    with pytest.raises(UsageError):
        Tensor([np.inf])


def test_grad_of_sum_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(ops.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_grad_of_sum_of_squares():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(ops.sum_all(x * x))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_non_scalar_loss_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(UsageError):
        backward(x * x)


def test_loss_grad_wrt_itself_is_one():
    x = Tensor([3.0], requires_grad=True)
    backward(x)
    np.testing.assert_array_equal(x.grad, [1.0])


def test_shared_subexpression_accumulates():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    backward(ops.sum_all(y + y))  # d/dx 2x^2 = 4x
    np.testing.assert_allclose(x.grad, [8.0])


def test_unused_parameter_keeps_zero_grad_after_zero_grad():
    used = Tensor([1.0], requires_grad=True)
    unused = Tensor([1.0], requires_grad=True)
    unused.zero_grad()
    backward(ops.sum_all(used * used))
    np.testing.assert_array_equal(unused.grad, [0.0])


def test_grads_accumulate_across_calls():
    x = Tensor([1.0], requires_grad=True)
    backward(ops.sum_all(x))
    backward(ops.sum_all(x))
    np.testing.assert_array_equal(x.grad, [2.0])


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = ops.sum_all(x * x)
    assert not y.requires_grad
    backward(y)
    assert x.grad is None


def test_deep_chain_does_not_recurse():
    x = Tensor([1.0], requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + x
    backward(ops.sum_all(y))
    np.testing.assert_array_equal(x.grad, [5001.0])
