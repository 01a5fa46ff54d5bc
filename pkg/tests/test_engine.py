"""Core autodiff engine: elementwise ops, matmul, activations, losses,
and the backward pass itself."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmdn import engine as E


def leaf(values, dtype=np.float64):
    return E.Node(np.asarray(values, dtype=dtype))


class TestEltwise:
    def test_add(self):
        out = E.eltwise("add", leaf([1.0, 2.0]), leaf([3.0, 4.0]))
        np.testing.assert_allclose(out.value, [4.0, 6.0])

    def test_mul_by_zero_and_grad(self):
        x = leaf([1.0, -2.0, 3.0])
        out = E.mul(x, leaf([0.0, 0.0, 0.0]))
        np.testing.assert_array_equal(out.value, [0.0, 0.0, 0.0])
        E.backward(E.sum_all(out))
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 0.0])

    def test_square_gradient_power_rule(self):
        x = leaf([1.0, -2.0, 3.0])
        E.backward(E.sum_all(E.mul(x, x)))
        np.testing.assert_allclose(x.grad, [2.0, -4.0, 6.0])

    def test_scalar_forms(self):
        x = leaf([1.0, 2.0])
        np.testing.assert_allclose(E.eltwise("scalar-mul", x, 3.0).value, [3.0, 6.0])
        np.testing.assert_allclose(E.eltwise("scalar-add", x, 1.5).value, [2.5, 3.5])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
            E.add(leaf([1.0, 2.0]), leaf([1.0, 2.0, 3.0]))

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown kind"):
            E.eltwise("pow", leaf([1.0]), leaf([1.0]))

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
    @settings(max_examples=25, deadline=None)
    def test_sub_then_add_roundtrip(self, values):
        a = leaf(values)
        b = leaf(values[::-1])
        out = E.add(E.sub(a, b), b)
        np.testing.assert_allclose(out.value, values, atol=1e-12)


class TestMatmul:
    def test_identity(self):
        m = leaf([[1.0, 2.0], [3.0, 4.0]])
        out = E.matmul(leaf(np.eye(2)), m)
        np.testing.assert_array_equal(out.value, m.value)

    def test_1x1(self):
        assert E.matmul(leaf([[2.0]]), leaf([[3.0]])).item() == 6.0

    def test_random_against_triple_loop(self, rng):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        expected = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    expected[i, j] += a[i, k] * b[k, j]
        out = E.matmul(leaf(a), leaf(b))
        np.testing.assert_allclose(out.value, expected, atol=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="inner dimensions"):
            E.matmul(leaf(np.ones((2, 3))), leaf(np.ones((2, 3))))


class TestActivations:
    def test_relu(self):
        np.testing.assert_array_equal(
            E.activation("relu", leaf([-1.0, 0.0, 2.0])).value, [0.0, 0.0, 2.0])

    def test_tanh_sigmoid_at_zero(self):
        assert E.activation("tanh", leaf([0.0])).item() == 0.0
        assert E.activation("sigmoid", leaf([0.0])).item() == 0.5

    def test_leaky_relu(self):
        out = E.activation("leaky-relu", leaf([-5.0]), alpha=0.2)
        np.testing.assert_allclose(out.value, [-1.0])

    def test_leaky_relu_alpha_range(self):
        with pytest.raises(ValueError):
            E.leaky_relu(leaf([1.0]), alpha=1.0)

    def test_relu_subgradient_zero_at_zero(self):
        x = leaf([0.0])
        E.backward(E.sum_all(E.relu(x)))
        assert x.grad[0] == 0.0
        y = leaf([0.0])
        E.backward(E.sum_all(E.leaky_relu(y, 0.3)))
        assert y.grad[0] == 0.0

    def test_sigmoid_stable_in_tails(self):
        out = E.sigmoid(leaf([-1000.0, 1000.0]))
        assert np.isfinite(out.value).all()
        np.testing.assert_allclose(out.value, [0.0, 1.0], atol=1e-12)


class TestLosses:
    def test_uniform_logits_cross_entropy_is_ln3(self):
        logits = leaf(np.zeros((2, 3)))
        loss = E.softmax_cross_entropy(logits, np.array([0, 2]))
        assert loss.item() == pytest.approx(math.log(3), rel=1e-6)

    def test_dominant_logit_drives_loss_to_zero(self):
        logits = leaf([[100.0, 0.0, 0.0]])
        assert E.softmax_cross_entropy(logits, np.array([0])).item() < 1e-6

    def test_cross_entropy_gradient_is_softmax_minus_onehot(self, rng):
        lv = rng.standard_normal((4, 3))
        labels = np.array([0, 2, 1, 1])
        logits = leaf(lv)
        E.backward(E.softmax_cross_entropy(logits, labels))
        p = E.softmax_values(lv)
        p[np.arange(4), labels] -= 1.0
        np.testing.assert_allclose(logits.grad, p / 4, atol=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="label out of range"):
            E.softmax_cross_entropy(leaf(np.zeros((1, 3))), np.array([3]))

    def test_bce_at_zero_score_is_ln2(self):
        loss = E.bce_from_logits(leaf(np.zeros((2, 2))), np.array([[0., 1.], [1., 0.]]))
        assert loss.item() == pytest.approx(math.log(2), rel=1e-9)

    def test_bce_saturating_correct_side(self):
        loss = E.bce_from_logits(leaf([[50.0]]), np.array([[1.0]]))
        assert loss.item() < 1e-9

    def test_bce_matches_naive_formula(self, rng):
        s = rng.standard_normal((5, 4)) * 3
        t = (rng.random((5, 4)) > 0.5).astype(float)
        loss = E.bce_from_logits(leaf(s), t)
        sig = 1 / (1 + np.exp(-s))
        naive = -(t * np.log(sig) + (1 - t) * np.log(1 - sig)).mean()
        assert loss.item() == pytest.approx(naive, abs=1e-9)

    def test_bce_rejects_nonbinary_targets(self):
        with pytest.raises(ValueError, match="targets must be 0 or 1"):
            E.bce_from_logits(leaf([[0.0]]), np.array([[0.5]]))

    def test_l1(self):
        assert E.l1_loss(leaf([1.0, 3.0]), leaf([0.0, 0.0])).item() == 2.0
        assert E.l1_loss(leaf([1.0, 3.0]), leaf([1.0, 3.0])).item() == 0.0

    def test_l1_gradient_is_scaled_sign(self):
        a, b = leaf([2.0, -1.0, 0.5]), leaf([1.0, 1.0, 0.5])
        E.backward(E.l1_loss(a, b))
        np.testing.assert_allclose(a.grad, np.array([1.0, -1.0, 0.0]) / 3)
        np.testing.assert_allclose(b.grad, -np.array([1.0, -1.0, 0.0]) / 3)


class TestBackward:
    def test_sum_gradient_ones(self):
        x = leaf([1.0, 2.0, 3.0])
        E.backward(E.sum_all(x))
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_constant_leaf_leaves_unrelated_grads_absent(self):
        x = leaf([1.0])
        E.backward(E.sum_all(leaf([5.0])))
        assert x.grad is None

    def test_diamond_accumulates_both_paths(self):
        x = leaf([3.0])
        E.backward(E.sum_all(E.add(x, x)))
        np.testing.assert_array_equal(x.grad, [2.0])

    def test_repeated_backward_accumulates(self):
        x = leaf([1.0, 2.0])
        loss = E.sum_all(E.mul(x, x))
        E.backward(loss)
        first = x.grad.copy()
        E.backward(loss)
        np.testing.assert_allclose(x.grad, 2 * first)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            E.backward(leaf([1.0, 2.0]))

    def test_deep_chain_no_recursion_limit(self):
        x = leaf([1.0])
        node = x
        for _ in range(5000):
            node = E.scale(node, 1.0)
        E.backward(E.sum_all(node))
        np.testing.assert_array_equal(x.grad, [1.0])

    def test_no_grad_builds_unattached_nodes(self):
        x = leaf([1.0, 2.0])
        with E.no_grad():
            out = E.mul(x, x)
        assert out.parents == ()
        E.backward(E.sum_all(E.mul(x, x)))
        assert x.grad is not None

    def test_detach_blocks_gradient(self):
        x = leaf([2.0])
        E.backward(E.sum_all(E.mul(x.detach(), x)))
        np.testing.assert_array_equal(x.grad, [2.0])  # one path only


class TestDtypePlumbing:
    def test_as_dtype(self):
        assert E.as_dtype("single") == np.float32
        assert E.as_dtype("double") == np.float64
        with pytest.raises(ValueError):
            E.as_dtype("half")

    def test_single_precision_stays_single(self):
        x = E.Node(np.ones(3, dtype=np.float32))
        out = E.mul(E.relu(x), x)
        assert out.value.dtype == np.float32
