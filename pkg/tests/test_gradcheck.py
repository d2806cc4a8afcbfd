import numpy as np
import pytest

from usamnet import ops
from usamnet.errors import UsageError
from usamnet.gradcheck import finite_diff_check, relative_error
from usamnet.tensor import Tensor, float64_mode


def test_relative_error_definition():
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(1.0, 3.0) == pytest.approx(0.5)
    assert relative_error(0.0, 1e-12) == pytest.approx(1e-4)


def test_sum_is_exact():
    with float64_mode():
        x = Tensor(np.random.default_rng(0).standard_normal(10))
        res = finite_diff_check(lambda: ops.sum_all(x), x)
    assert res.max_rel_error < 1e-9
    assert res.checked == 10 and not res.excluded_kinks


def test_leaky_relu_at_zero_is_excluded():
    with float64_mode():
        x = Tensor([0.0, 0.7, -0.4])
        res = finite_diff_check(lambda: ops.sum_all(ops.leaky_relu(x)), x)
    assert res.excluded_kinks == [0]
    assert res.checked == 2
    assert res.max_rel_error < 1e-9


def test_kink_just_inside_the_stencil_is_excluded():
    # kink at distance h/3 from the evaluation point
    with float64_mode():
        x = Tensor([-1e-5 / 3])
        res = finite_diff_check(lambda: ops.sum_all(ops.leaky_relu(x)), x, h=1e-5)
    assert res.excluded_kinks == [0]


def test_smooth_nonlinear_function_is_not_flagged():
    with float64_mode():
        x = Tensor(np.linspace(-3, 3, 13))
        res = finite_diff_check(lambda: ops.sum_all(ops.sigmoid_scale(x, 1.0)), x)
    assert not res.excluded_kinks
    assert res.max_rel_error < 1e-6


def test_wrong_gradient_is_detected():
    with float64_mode():
        x = Tensor([0.3, -0.2])

        def f():
            y = ops.sum_all(ops.mul(x, x))
            # same value, but the recorded gradient is that of sum(x) only
            return Tensor._from_op(y.data, (x,), lambda g: (np.full(x.shape, g),))

        res = finite_diff_check(f, x)
    assert res.max_rel_error > 0.1


def test_requires_64_bit():
    x = Tensor([1.0])
    with pytest.raises(UsageError):
        finite_diff_check(lambda: ops.sum_all(x), x)


def test_indices_subset_and_restores_input():
    with float64_mode():
        x = Tensor(np.arange(5.0))
        before = x.data.copy()
        res = finite_diff_check(lambda: ops.sum_all(ops.mul(x, x)), x, indices=[1, 3])
    assert res.checked == 2
    np.testing.assert_array_equal(x.data, before)
