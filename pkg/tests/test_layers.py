import numpy as np
import pytest

from spadenoise import gradcheck as G
from spadenoise import layers as L
from conftest import naive_conv2d


class TestConv2d:
    def test_scalar_kernel_scales(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        p = L.ConvParams(np.array([[[[2.0]]]]), np.zeros(1), 1, 0)
        np.testing.assert_array_equal(L.conv2d_forward(x, p), [[[2.0, 4.0], [6.0, 8.0]]])

    def test_zero_weights_give_bias(self, rng):
        x = rng.standard_normal((2, 5, 5))
        p = L.ConvParams(np.zeros((3, 2, 3, 3)), np.array([0.5, -1.0, 2.0]), 1, 1)
        out = L.conv2d_forward(x, p)
        assert out.shape == (3, 5, 5)
        for o, b in enumerate(p.bias):
            assert np.all(out[o] == b)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_naive_loops(self, rng, stride, pad):
        x = rng.standard_normal((2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        p = L.ConvParams(w, b, stride, pad)
        np.testing.assert_allclose(L.conv2d_forward(x, p), naive_conv2d(x, w, b, stride, pad),
                                   rtol=0, atol=1e-12)

    def test_batch_matches_single(self, rng):
        x = rng.standard_normal((3, 2, 6, 6))
        p = L.ConvParams(rng.standard_normal((4, 2, 3, 3)), rng.standard_normal(4))
        batched = L.conv2d_forward(x, p)
        for i in range(3):
            np.testing.assert_allclose(batched[i], L.conv2d_forward(x[i], p), atol=1e-13)

    def test_linear_in_input_without_bias(self, rng):
        x, y = rng.standard_normal((2, 2, 6, 6))
        p = L.ConvParams(rng.standard_normal((3, 2, 3, 3)), np.zeros(3))
        a, b = 0.7, -1.3
        np.testing.assert_allclose(L.conv2d_forward(a * x + b * y, p),
                                   a * L.conv2d_forward(x, p) + b * L.conv2d_forward(y, p), atol=1e-10)

    def test_channel_mismatch_names_both_shapes(self, rng):
        p = L.ConvParams(np.zeros((3, 2, 3, 3)), np.zeros(3))
        with pytest.raises(L.ShapeError, match=r"\(4, 5, 5\).*\(3, 2, 3, 3\)"):
            L.conv2d_forward(np.zeros((4, 5, 5)), p)

    def test_uneven_stride_rejected(self):
        p = L.ConvParams(np.zeros((1, 1, 3, 3)), np.zeros(1), 2, 1)
        with pytest.raises(L.ShapeError, match="stride"):
            L.conv2d_forward(np.zeros((1, 6, 6)), p)

    def test_backward_zero_grad(self, rng):
        x = rng.standard_normal((2, 4, 4))
        p = L.ConvParams(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3))
        for g in L.conv2d_backward(x, p, np.zeros((3, 4, 4))):
            assert not g.any()

    def test_backward_scalar_kernel(self, rng):
        x = rng.standard_normal((1, 4, 4))
        g = rng.standard_normal((1, 4, 4))
        p = L.ConvParams(np.array([[[[-3.0]]]]), np.zeros(1), 1, 0)
        gx, _, _ = L.conv2d_backward(x, p, g)
        np.testing.assert_allclose(gx, -3.0 * g, atol=1e-15)

    def test_backward_shape_mismatch(self, rng):
        p = L.ConvParams(np.zeros((3, 2, 3, 3)), np.zeros(3))
        with pytest.raises(L.ShapeError, match="grad_out"):
            L.conv2d_backward(np.zeros((2, 4, 4)), p, np.zeros((3, 3, 3)))

    def test_backward_finite_differences_tight(self, rng):
        # stricter than the suite threshold: every component within 1e-6 relative
        x = rng.standard_normal((2, 5, 5))
        p = L.ConvParams(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3), 1, 1)
        r = rng.standard_normal((3, 5, 5))
        obj = lambda: float(np.sum(L.conv2d_forward(x, p) * r))
        gx, gw, gb = L.conv2d_backward(x, p, r)
        for t, g in ((x, gx), (p.weights, gw), (p.bias, gb)):
            res = G.compare("conv", g, G.numeric_gradient(obj, t), rtol=1e-6)
            assert res.passed, res.line()

    def test_deterministic(self, rng):
        x = rng.standard_normal((2, 3, 8, 8))
        p = L.ConvParams(rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4))
        assert L.conv2d_forward(x, p).tobytes() == L.conv2d_forward(x.copy(), p).tobytes()


class TestDense:
    def test_identity(self, rng):
        x = rng.standard_normal(4)
        np.testing.assert_array_equal(L.dense_forward(x, L.DenseParams(np.eye(4), np.zeros(4))), x)

    def test_zero_weights_give_bias(self, rng):
        b = rng.standard_normal(3)
        np.testing.assert_array_equal(L.dense_forward(rng.standard_normal(5), L.DenseParams(np.zeros((3, 5)), b)), b)

    def test_matches_loop(self, rng):
        x = rng.standard_normal(4)
        w = rng.standard_normal((2, 4))
        b = rng.standard_normal(2)
        expected = [b[o] + sum(w[o, i] * x[i] for i in range(4)) for o in range(2)]
        np.testing.assert_allclose(L.dense_forward(x, L.DenseParams(w, b)), expected, atol=1e-12)

    def test_batched_backward_matches_per_sample(self, rng):
        x = rng.standard_normal((3, 4))
        p = L.DenseParams(rng.standard_normal((2, 4)), rng.standard_normal(2))
        g = rng.standard_normal((3, 2))
        gx, gw, gb = L.dense_backward(x, p, g)
        parts = [L.dense_backward(x[i], p, g[i]) for i in range(3)]
        np.testing.assert_allclose(gx, np.stack([q[0] for q in parts]), atol=1e-14)
        np.testing.assert_allclose(gw, sum(q[1] for q in parts), atol=1e-14)
        np.testing.assert_allclose(gb, sum(q[2] for q in parts), atol=1e-14)


class TestActivations:
    def test_relu(self):
        np.testing.assert_array_equal(L.relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_relu_kink_subgradient_zero(self):
        assert L.relu_backward(np.array([0.0]), np.array([5.0]))[0] == 0.0

    def test_sigmoid_zero(self):
        assert L.sigmoid(np.array(0.0)) == 0.5

    def test_sigmoid_gradient_fd(self, rng):
        x = rng.uniform(-4, 4, 10)
        g = L.sigmoid_backward(x, np.ones_like(x))
        h = 1e-5
        fd = (L.sigmoid(x + h) - L.sigmoid(x - h)) / (2 * h)
        np.testing.assert_allclose(g, fd, atol=1e-8)

    def test_sigmoid_stable_at_extremes(self):
        out = L.sigmoid(np.array([-800.0, 800.0]))
        assert np.all(np.isfinite(out)) and out[0] == 0.0 and out[1] == 1.0


class TestPoolingAndConcat:
    def test_gap_constant(self):
        assert L.global_average_pool(np.full((1, 3, 3), 2.5))[0, 0, 0] == 2.5

    def test_gap_example(self):
        assert L.global_average_pool(np.array([[[1.0, 2.0], [3.0, 4.0]]]))[0, 0, 0] == 2.5

    def test_gap_matches_naive(self, rng):
        x = rng.standard_normal((3, 4, 4))
        expected = [sum(x[c, i, j] for i in range(4) for j in range(4)) / 16 for c in range(3)]
        np.testing.assert_allclose(L.global_average_pool(x)[:, 0, 0], expected, atol=1e-12)

    def test_gap_backward_uniform(self):
        g = L.global_average_pool_backward(np.zeros((2, 2, 4)), np.array([[[8.0]], [[16.0]]]))
        assert np.all(g[0] == 1.0) and np.all(g[1] == 2.0)

    def test_concat_empty(self, rng):
        x = rng.standard_normal((2, 3, 3))
        np.testing.assert_array_equal(L.concat_channels(x, np.zeros((0, 3, 3))), x)

    def test_concat_example(self):
        out = L.concat_channels(np.ones((1, 2, 2)), np.full((1, 2, 2), 2.0))
        assert out.shape == (2, 2, 2) and np.all(out[0] == 1) and np.all(out[1] == 2)

    def test_split_inverts_concat(self, rng):
        a, b = rng.standard_normal((2, 3, 3)), rng.standard_normal((4, 3, 3))
        a2, b2 = L.split_channels(L.concat_channels(a, b), [2, 4])
        np.testing.assert_array_equal(a, a2)
        np.testing.assert_array_equal(b, b2)

    def test_concat_spatial_mismatch(self):
        with pytest.raises(L.ShapeError):
            L.concat_channels(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_layer_suite_passes(seed):
    for res in G.check_layers(seed):
        assert res.passed, res.line()


def test_corrupted_backward_detected():
    results = G.check_layers(0, sign=-1.0)
    assert not any(r.passed for r in results)
