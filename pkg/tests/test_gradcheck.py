"""Finite-difference harness behavior and the op-level sweep."""

import numpy as np
import pytest

from mmdn import engine as E
from mmdn.gradcheck import finite_difference_check
from mmdn.gradcheck_suite import run_suite


def test_linear_function_near_exact():
    err = finite_difference_check(
        lambda x: E.sum_all(E.scale(x, 3.0)), [(5,)], eps=1e-5)
    assert err < 1e-9


def test_sum_of_squares():
    err = finite_difference_check(
        lambda x: E.sum_all(E.mul(x, x)), [(6,)], eps=1e-5)
    assert err < 1e-6


def test_composite_conv_bn_relu_mean_chain():
    from mmdn import layers as L

    def chain(x, w, g, b):
        y = L.conv2d(x, w, stride=1, padding=1)
        y = L.batchnorm2d(y, g, b, np.zeros(4), np.ones(4), "train")
        return E.mean_all(E.relu(y))

    err = finite_difference_check(chain, [(2, 3, 5, 5), (4, 3, 3, 3), (4,), (4,)],
                                  eps=1e-4, rng=np.random.default_rng(4))
    assert err < 1e-3


def test_non_scalar_fn_rejected():
    with pytest.raises(ValueError, match="scalar"):
        finite_difference_check(lambda x: E.mul(x, x), [(3,)])


def test_suite_every_op_under_tolerance():
    results = run_suite()
    failures = {k: v for k, v in results.items() if v >= 1e-3}
    assert not failures, f"ops over tolerance: {failures}"
