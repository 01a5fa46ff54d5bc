"""Layer primitives: convolutions against direct-summation oracles, norms,
pooling, concat, linear, dropout."""

import numpy as np
import pytest

from mmdn import engine as E
from mmdn import layers as L


def leaf(values, dtype=np.float64):
    return E.Node(np.asarray(values, dtype=dtype))


def conv_oracle(x, w, b, stride, pad):
    """Direct-summation cross-correlation."""
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    y = np.zeros((n, k, ho, wo))
    for ni in range(n):
        for ki in range(k):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[ni, :, i * stride:i * stride + kh,
                               j * stride:j * stride + kw]
                    y[ni, ki, i, j] = (patch * w[ki]).sum() + (b[ki] if b is not None else 0)
    return y


class TestConv2d:
    def test_all_ones_2x2_kernel(self):
        x = leaf(np.ones((1, 1, 3, 3)))
        w = leaf(np.ones((1, 1, 2, 2)))
        out = L.conv2d(x, w)
        np.testing.assert_array_equal(out.value, np.full((1, 1, 2, 2), 4.0))

    def test_1x1_identity(self, rng):
        x = leaf(rng.standard_normal((2, 1, 5, 5)))
        out = L.conv2d(x, leaf(np.ones((1, 1, 1, 1))), leaf([0.0]))
        np.testing.assert_array_equal(out.value, x.value)

    def test_random_against_direct_summation(self, rng):
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = L.conv2d(leaf(x), leaf(w), leaf(b), stride=2, padding=1)
        np.testing.assert_allclose(out.value, conv_oracle(x, w, b, 2, 1), atol=1e-5)

    @pytest.mark.parametrize("stride,pad,kh", [(1, 0, 1), (1, 1, 3), (2, 1, 4), (3, 2, 5)])
    def test_output_shape_formula(self, rng, stride, pad, kh):
        x = leaf(rng.standard_normal((1, 2, 12, 12)))
        w = leaf(rng.standard_normal((3, 2, kh, kh)))
        out = L.conv2d(x, w, stride=stride, padding=pad)
        expected = (12 + 2 * pad - kh) // stride + 1
        assert out.value.shape == (1, 3, expected, expected)

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(ValueError, match="larger than padded input"):
            L.conv2d(leaf(np.ones((1, 1, 3, 3))), leaf(np.ones((1, 1, 5, 5))))

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="channels"):
            L.conv2d(leaf(np.ones((1, 2, 4, 4))), leaf(np.ones((1, 3, 3, 3))))

    def test_backward_matches_oracle_via_perturbation(self, rng):
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        xn, wn = leaf(x), leaf(w)
        out = L.conv2d(xn, wn, stride=2, padding=1)
        r = rng.standard_normal(out.value.shape)
        E.backward(E.sum_all(E.mul(out, E.Node(r))))
        eps = 1e-6
        for idx in [(0, 1, 2, 2), (0, 0, 4, 4)]:
            xp = x.copy(); xp[idx] += eps
            xm = x.copy(); xm[idx] -= eps
            fd = ((conv_oracle(xp, w, None, 2, 1) * r).sum()
                  - (conv_oracle(xm, w, None, 2, 1) * r).sum()) / (2 * eps)
            assert xn.grad[idx] == pytest.approx(fd, rel=1e-5)


class TestConvTranspose:
    def test_stride1_1x1_identity(self, rng):
        x = leaf(rng.standard_normal((1, 2, 4, 4)))
        w = leaf(np.eye(2).reshape(2, 2, 1, 1))
        out = L.conv2d_transpose(x, w, stride=1, padding=0)
        np.testing.assert_array_equal(out.value, x.value)

    def test_scatter_add_oracle_2x2_ones(self):
        x = leaf(np.ones((1, 1, 2, 2)))
        w = leaf(np.ones((1, 1, 2, 2)))
        out = L.conv2d_transpose(x, w, stride=2, padding=0)
        np.testing.assert_array_equal(out.value, np.ones((1, 1, 4, 4)))

    def test_shape_formula(self, rng):
        x = leaf(rng.standard_normal((1, 8, 16, 16)))
        w = leaf(rng.standard_normal((8, 5, 3, 3)))
        out = L.conv2d_transpose(x, w, stride=2, padding=1)
        assert out.value.shape == (1, 5, 31, 31)

    def test_adjoint_of_conv2d(self, rng):
        """<conv(x), y> == <x, conv_transpose(y)> with tied weights, on a
        stride-tiling-exact geometry."""
        x = rng.standard_normal((1, 3, 7, 7))
        w = rng.standard_normal((4, 3, 3, 3))
        y = rng.standard_normal((1, 4, 4, 4))
        fwd = L.conv2d(leaf(x), leaf(w), stride=2, padding=1).value
        back = L.conv2d_transpose(leaf(y), leaf(w), stride=2, padding=1).value
        assert (fwd * y).sum() == pytest.approx((x * back).sum(), rel=1e-9)

    def test_nonpositive_output_rejected(self):
        with pytest.raises(ValueError, match="not positive"):
            L.conv2d_transpose(leaf(np.ones((1, 1, 1, 1))),
                               leaf(np.ones((1, 1, 2, 2))), stride=1, padding=2)


class TestReflectionPad:
    def test_pad0_identity(self, rng):
        x = leaf(rng.standard_normal((1, 1, 3, 3)))
        np.testing.assert_array_equal(L.reflection_pad2d(x, 0).value, x.value)

    def test_1d_analog(self):
        x = leaf(np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 3))
        out = L.reflection_pad2d(leaf(np.array([[1.0, 2.0, 3.0]] * 3)[None, None]), 1)
        np.testing.assert_array_equal(out.value[0, 0, 1], [2.0, 1.0, 2.0, 3.0, 2.0])

    def test_matches_numpy_reflect(self, rng):
        x = rng.standard_normal((2, 3, 5, 6))
        out = L.reflection_pad2d(leaf(x), 2)
        np.testing.assert_array_equal(
            out.value, np.pad(x, ((0, 0), (0, 0), (2, 2), (2, 2)), mode="reflect"))

    def test_pad_too_large(self):
        with pytest.raises(ValueError, match="too large"):
            L.reflection_pad2d(leaf(np.ones((1, 1, 3, 3))), 3)


class TestBatchNorm:
    def test_constant_input_train_zeros(self):
        x = leaf(np.full((2, 3, 4, 4), 7.0))
        out = L.batchnorm2d(x, leaf(np.ones(3)), leaf(np.zeros(3)),
                            np.zeros(3), np.ones(3), "train")
        np.testing.assert_allclose(out.value, 0.0, atol=1e-3)

    def test_beta_shifts_constant_input(self):
        x = leaf(np.full((2, 3, 4, 4), 7.0))
        out = L.batchnorm2d(x, leaf(np.ones(3)), leaf(np.full(3, 5.0)),
                            np.zeros(3), np.ones(3), "train")
        np.testing.assert_allclose(out.value, 5.0, atol=1e-3)

    def test_train_output_standardized(self, rng):
        x = leaf(rng.standard_normal((4, 3, 8, 8)) * 3 + 2)
        out = L.batchnorm2d(x, leaf(np.ones(3)), leaf(np.zeros(3)),
                            np.zeros(3), np.ones(3), "train")
        mean = out.value.mean(axis=(0, 2, 3))
        var = out.value.var(axis=(0, 2, 3))
        assert np.abs(mean).max() < 1e-5
        assert np.abs(var - 1).max() < 1e-4

    def test_running_stats_updated_and_used_in_eval(self, rng):
        x = rng.standard_normal((4, 2, 4, 4)) + 5.0
        rm, rv = np.zeros(2), np.ones(2)
        L.batchnorm2d(leaf(x), leaf(np.ones(2)), leaf(np.zeros(2)),
                      rm, rv, "train", momentum=1.0)
        np.testing.assert_allclose(rm, x.mean(axis=(0, 2, 3)), rtol=1e-6)
        out = L.batchnorm2d(leaf(x), leaf(np.ones(2)), leaf(np.zeros(2)),
                            rm, rv, "eval")
        assert np.abs(out.value.mean(axis=(0, 2, 3))).max() < 1e-5

    def test_single_element_train_rejected(self):
        with pytest.raises(ValueError, match=">= 2"):
            L.batchnorm2d(leaf(np.ones((1, 3, 1, 1))), leaf(np.ones(3)),
                          leaf(np.zeros(3)), np.zeros(3), np.ones(3), "train")


class TestInstanceNorm:
    def test_constant_channel_zeros(self):
        x = leaf(np.full((2, 3, 4, 4), 9.0))
        np.testing.assert_allclose(L.instance_norm2d(x).value, 0.0, atol=1e-2)

    def test_moments(self, rng):
        x = leaf(rng.standard_normal((2, 3, 8, 8)) * 4 + 1)
        out = L.instance_norm2d(x).value
        np.testing.assert_allclose(out.mean(axis=(2, 3)), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=(2, 3)), 1.0, atol=1e-4)

    def test_1x1_spatial_rejected(self):
        with pytest.raises(ValueError, match="H\\*W >= 2"):
            L.instance_norm2d(leaf(np.ones((1, 1, 1, 1))))


class TestPooling:
    def test_avg_2x2(self):
        x = leaf(np.array([[1.0, 2.0], [3.0, 4.0]])[None, None])
        out = L.pool2d("avg", x, k=2, stride=2)
        np.testing.assert_array_equal(out.value, [[[[2.5]]]])

    def test_global_avg_constant(self):
        x = leaf(np.full((2, 3, 5, 5), 7.0))
        out = L.pool2d("global-avg", x)
        assert out.value.shape == (2, 3)
        np.testing.assert_allclose(out.value, 7.0)

    def test_windowed_mean_oracle_on_ramp(self):
        ramp = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        out = L.avg_pool2d(leaf(ramp), 2, 2).value
        expected = np.array([[(0 + 1 + 4 + 5) / 4, (2 + 3 + 6 + 7) / 4],
                             [(8 + 9 + 12 + 13) / 4, (10 + 11 + 14 + 15) / 4]])
        np.testing.assert_array_equal(out[0, 0], expected)

    def test_window_exceeds_input(self):
        with pytest.raises(ValueError, match="exceeds input"):
            L.avg_pool2d(leaf(np.ones((1, 1, 3, 3))), 4)


class TestConcat:
    def test_single_part_identity(self, rng):
        x = leaf(rng.standard_normal((2, 3, 4, 4)))
        np.testing.assert_array_equal(L.concat_channels([x]).value, x.value)

    def test_channel_order(self, rng):
        a = leaf(rng.standard_normal((1, 2, 3, 3)))
        b = leaf(rng.standard_normal((1, 3, 3, 3)))
        out = L.concat_channels([a, b])
        assert out.value.shape == (1, 5, 3, 3)
        np.testing.assert_array_equal(out.value[:, 2], b.value[:, 0])

    def test_slicing_recovers_parts_exactly(self, rng):
        parts = [leaf(rng.standard_normal((2, c, 3, 3))) for c in (1, 4, 2)]
        out = L.concat_channels(parts).value
        offsets = [0, 1, 5, 7]
        for part, lo, hi in zip(parts, offsets, offsets[1:]):
            np.testing.assert_array_equal(out[:, lo:hi], part.value)

    def test_grad_of_sum_is_ones(self, rng):
        a = leaf(rng.standard_normal((1, 2, 2, 2)))
        b = leaf(rng.standard_normal((1, 3, 2, 2)))
        E.backward(E.sum_all(L.concat_channels([a, b])))
        np.testing.assert_array_equal(a.grad, np.ones_like(a.value))

    def test_spatial_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            L.concat_channels([leaf(np.ones((1, 1, 2, 2))), leaf(np.ones((1, 1, 3, 3)))])


class TestLinear:
    def test_identity(self, rng):
        x = leaf(rng.standard_normal((3, 4)))
        out = L.linear(x, leaf(np.eye(4)), leaf(np.zeros(4)))
        np.testing.assert_array_equal(out.value, x.value)

    def test_small_example(self):
        out = L.linear(leaf([[1.0, 1.0]]), leaf([[1.0], [1.0]]), leaf([0.5]))
        np.testing.assert_array_equal(out.value, [[2.5]])

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            L.linear(leaf(np.ones((2, 3))), leaf(np.ones((4, 2))), leaf(np.zeros(2)))


class TestDropout:
    def test_rate0_identity_both_modes(self, rng):
        x = leaf(rng.standard_normal((4, 4)))
        for mode in ("train", "eval"):
            out = L.dropout(x, 0.0, mode, np.random.default_rng(0))
            np.testing.assert_array_equal(out.value, x.value)

    def test_eval_identity_any_rate(self, rng):
        x = leaf(rng.standard_normal((4, 4)))
        np.testing.assert_array_equal(L.dropout(x, 0.7, "eval").value, x.value)

    def test_inverted_scaling_preserves_mean(self):
        x = leaf(np.ones(100_000))
        out = L.dropout(x, 0.2, "train", np.random.default_rng(7))
        assert out.value.mean() == pytest.approx(1.0, abs=0.02)

    def test_rate_1_rejected(self):
        with pytest.raises(ValueError, match="rate"):
            L.dropout(leaf(np.ones(3)), 1.0, "train", np.random.default_rng(0))

    def test_mask_shared_between_forward_and_backward(self, rng):
        x = leaf(np.ones(1000))
        out = L.dropout(x, 0.5, "train", np.random.default_rng(3))
        E.backward(E.sum_all(out))
        np.testing.assert_array_equal((x.grad > 0), (out.value > 0))
