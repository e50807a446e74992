import math

import numpy as np
import pytest

from spadenoise import metrics as M
from spadenoise.training import synthetic_image


class TestPsnr:
    def test_identical_is_inf(self, rng):
        a = rng.uniform(size=(8, 8))
        assert M.psnr(a, a) == math.inf

    def test_mse_001(self):
        a = np.zeros((10, 10))
        assert abs(M.psnr(a, a + 0.1) - 20.0) < 1e-9

    def test_mse_one(self):
        assert M.psnr(np.zeros(4), np.ones(4)) == 0.0

    def test_peak_255(self):
        assert abs(M.psnr(np.zeros(4), np.full(4, 2.55), peak=255) - 40.0) < 1e-9

    def test_symmetric(self, rng):
        a, b = rng.uniform(size=(2, 16, 16))
        assert M.psnr(a, b) == M.psnr(b, a)

    def test_decreases_with_noise(self, rng):
        img = synthetic_image(64, np.random.default_rng(0))
        z = np.random.default_rng(1).standard_normal(img.shape)
        values = [M.psnr(img, img + s * z) for s in (0.01, 0.05, 0.1)]
        assert values[0] > values[1] > values[2]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            M.psnr(np.zeros(3), np.zeros(4))


class TestSsim:
    def test_self_is_one(self, rng):
        a = rng.uniform(size=(20, 24))
        assert M.ssim(a, a) == 1.0

    def test_constant_images_closed_form(self):
        # mu_a = 0, mu_b = L, all variances 0: (C1)(C2) / ((L^2 + C1)(C2)) = C1 / (L^2 + C1)
        peak = 1.0
        c1 = (0.01 * peak) ** 2
        expected = c1 / (peak ** 2 + c1)
        got = M.ssim(np.zeros((16, 16)), np.full((16, 16), peak), peak)
        assert abs(got - expected) < 1e-12 * max(1.0, expected) + 1e-15
        assert abs(expected - 9.999000099990002e-05) < 1e-18

    def test_inverted_structure_negative(self, rng):
        a = rng.standard_normal((32, 32)) * 0.2 + 0.5
        b = -(a - a.mean()) + a.mean()
        assert M.ssim(a, b) < 0

    def test_symmetric(self, rng):
        a, b = rng.uniform(size=(2, 16, 16))
        assert abs(M.ssim(a, b) - M.ssim(b, a)) < 1e-12

    def test_multichannel_average(self, rng):
        a, b = rng.uniform(size=(2, 3, 16, 16))
        assert abs(M.ssim(a, b) - np.mean([M.ssim(a[i], b[i]) for i in range(3)])) < 1e-15

    def test_too_small(self):
        with pytest.raises(ValueError, match="smaller than"):
            M.ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_window_normalized(self):
        w = M.gaussian_window()
        assert w.shape == (11, 11) and abs(w.sum() - 1) < 1e-15


def test_report_aggregates(rng):
    r = M.MetricReport()
    for i in range(3):
        a = rng.uniform(size=(16, 16))
        r.add(f"img{i}", a, np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1))
    assert r.mean_psnr == pytest.approx(np.mean(r.psnr), abs=0)
    assert r.mean_ssim == pytest.approx(np.mean(r.ssim), abs=0)
    assert "mean_psnr=" in r.to_kv() and "img2" in r.to_text()
