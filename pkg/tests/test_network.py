import numpy as np
import pytest

from spadenoise import gradcheck as G
from spadenoise import network as N
from spadenoise.layers import ShapeError

TOY = N.ModelConfig(input_channels=1, base_channels=4, spa_level=2, eam_counts=(1, 1, 1, 1))


def closed_form_count(cfg):
    conv = lambda i, o, k=3: o * i * k * k + o
    c, cin, r = cfg.base_channels, cfg.input_channels, cfg.reduction

    def ca(ch):
        h = max(1, ch // r)
        return 2 * ch * h + h + ch

    spa = ca(c) + cfg.spa_level * ca(4 * c)
    stage1 = conv(cin, c) + 3 * conv(c, c) + spa + conv(c, cin)
    eam = 4 * conv(c, c) + conv(2 * c, c, 1) + spa
    stage2 = conv(2 * cin, c) + sum(cfg.eam_counts) * eam + conv(c, cin)
    return stage1 + stage2


class TestConfig:
    @pytest.mark.parametrize("cfg", [
        TOY, N.ModelConfig(), N.ModelConfig(input_channels=3, base_channels=64, spa_level=3),
        N.ModelConfig(base_channels=8, spa_level=0, pyramid_levels=1, eam_counts=(1, 2)),
    ])
    def test_parameter_count_closed_form(self, cfg):
        assert N.init_weights(cfg).size == closed_form_count(cfg)

    def test_paper_layout_defaults(self):
        cfg = N.ModelConfig()
        assert cfg.pyramid_levels == 3 and cfg.eam_counts == (2, 2, 4, 4)
        assert [cfg.eam_count(lv) for lv in (3, 2, 1, 0)] == [2, 2, 4, 4]

    def test_invalid(self):
        with pytest.raises(ValueError, match="divisible"):
            N.ModelConfig(base_channels=6, reduction=4)
        with pytest.raises(ValueError, match="eam_counts"):
            N.ModelConfig(eam_counts=(1, 1))
        with pytest.raises(ValueError):
            N.ModelConfig(eam_counts=(1, 0, 1, 1))

    def test_dict_roundtrip(self):
        cfg = N.ModelConfig(input_channels=3, base_channels=16, spa_level=1, eam_counts=(1, 2, 3, 4))
        assert N.ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_registry_names_unique_and_deterministic(self):
        a, b = N.init_weights(TOY, 5), N.init_weights(TOY, 5)
        assert list(a) == list(b)
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert all(np.all(np.isfinite(v)) for v in a.values())

    def test_missing_entry_named(self):
        w = N.init_weights(TOY)
        del w["stage1.conv2.bias"]
        with pytest.raises(KeyError, match="stage1.conv2.bias"):
            N.stage1_estimate(np.zeros((1, 8, 8)), w, TOY)


class TestStages:
    def test_zero_weights_zero_estimate(self, rng):
        w = N.init_weights(TOY).zeros_like()
        assert not N.stage1_estimate(rng.uniform(size=(1, 8, 8)), w, TOY).any()

    def test_stage1_shape_rgb(self, rng):
        cfg = N.ModelConfig(input_channels=3, base_channels=4, spa_level=3, eam_counts=(1, 1, 1, 1))
        x = rng.uniform(size=(3, 64, 64))
        assert N.stage1_estimate(x, N.init_weights(cfg), cfg).shape == (3, 64, 64)

    def test_stage2_shape_rgb(self, rng):
        cfg = N.ModelConfig(input_channels=3, base_channels=4, spa_level=3, eam_counts=(1, 1, 1, 1))
        w = N.init_weights(cfg)
        x = rng.uniform(size=(3, 64, 64))
        assert N.stage2_reconstruct(x, N.stage1_estimate(x, w, cfg), w, cfg).shape == (3, 64, 64)

    def test_zero_tail_is_identity(self, rng):
        w = N.init_weights(TOY, 3)
        w["stage2.tail.weight"][:] = 0
        w["stage2.tail.bias"][:] = 0
        x = rng.uniform(size=(1, 16, 16))
        np.testing.assert_array_equal(N.denoise(x, w, TOY), x)

    def test_stage2_equals_model(self, rng):
        w = N.init_weights(TOY, 1)
        x = rng.uniform(size=(1, 16, 16))
        y = N.stage2_reconstruct(x, N.stage1_estimate(x, w, TOY), w, TOY)
        np.testing.assert_array_equal(y, N.denoise(x, w, TOY))

    def test_misaligned_input_rejected(self):
        with pytest.raises(ShapeError, match="multiples of 8"):
            N.denoise(np.zeros((1, 12, 16)), N.init_weights(TOY), TOY)

    def test_batched_matches_single(self, rng):
        w = N.init_weights(TOY, 2)
        x = rng.uniform(size=(2, 1, 16, 16))
        y = N.denoise(x, w, TOY)
        for i in range(2):
            np.testing.assert_allclose(y[i], N.denoise(x[i], w, TOY), atol=1e-12)


class TestBackward:
    def test_every_parameter_gets_gradient(self, rng):
        cfg = N.ModelConfig(input_channels=1, base_channels=4, spa_level=2)
        w = N.init_weights(cfg, 0)
        x = rng.uniform(size=(2, 1, 16, 16))
        y, cache = N.model_forward(x, w, cfg)
        grads, gx = N.model_backward(cache, w, cfg, rng.standard_normal(y.shape))
        assert list(grads) == list(w)
        assert all(grads[k].shape == w[k].shape for k in w)
        assert any(g.any() for g in grads.values())
        assert gx.shape == x.shape

    def test_all_pass_network_gradient(self, rng):
        w = N.init_weights(TOY, 0)
        x = rng.uniform(size=(1, 16, 16))
        y, cache = N.model_forward(x, w, TOY, force_gates=1.0)
        grads, _ = N.model_backward(cache, w, TOY, np.ones_like(y))
        assert not any(grads[k].any() for k in w if ".spa." in k)

    def test_network_gradcheck(self):
        for res in G.check_network(0):
            assert res.passed, res.line()


class TestDenoiseImage:
    def test_aligned_needs_no_padding(self):
        cfg = N.ModelConfig(spa_level=3)
        assert N.padding_for(64, 64, cfg) == (0, 0)

    def test_odd_size(self, rng):
        assert N.padding_for(50, 70, TOY) == (6, 2)
        x = rng.uniform(size=(50, 70))
        out = N.denoise_image(x, N.init_weights(TOY), TOY)
        assert out.shape == (50, 70)
        assert out.min() >= 0 and out.max() <= 1

    def test_identity_weights_preserve_image(self, rng):
        w = N.init_weights(TOY, 3)
        w["stage2.tail.weight"][:] = 0
        w["stage2.tail.bias"][:] = 0
        x = rng.uniform(size=(1, 13, 21))
        np.testing.assert_array_equal(N.denoise_image(x, w, TOY), x)

    def test_empty_rejected(self):
        with pytest.raises(ShapeError, match="empty"):
            N.denoise_image(np.zeros((0, 4)), N.init_weights(TOY), TOY)
