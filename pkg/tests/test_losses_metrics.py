from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.color import rgb2lab

from rganet import metrics
from rganet.gradcheck import gradcheck
from rganet.losses import gaussian_window, loss_total, ssim_mean, window_size_for

from oracles import ssim_naive

PAIRS = np.loadtxt(Path(__file__).parent / "data" / "ciede2000_pairs.tsv")
RNG = np.random.default_rng(5)


def test_gaussian_window():
    g = gaussian_window()
    assert g.shape == (11,) and abs(g.sum() - 1) < 1e-15 and g.argmax() == 5


def test_window_shrinks_for_small_images():
    assert window_size_for(64, 64) == 11
    assert window_size_for(8, 20) == 7
    assert window_size_for(1, 1) == 1


def test_ssim_self_is_one():
    x = RNG.random((2, 3, 20, 24))
    assert abs(float(ssim_mean(x, x).data) - 1) <= 1e-6


def test_ssim_constant_closed_form():
    x, y = np.zeros((1, 3, 16, 16)), np.ones((1, 3, 16, 16))
    expected = (2 * 0 * 1 + 1e-4) / (0 + 1 + 1e-4)
    assert abs(float(ssim_mean(x, y).data) - expected) <= 1e-7
    assert abs(expected - 9.999e-5) <= 1e-7


def test_ssim_naive_oracle():
    x, y = RNG.random((1, 2, 17, 15)), RNG.random((1, 2, 17, 15))
    ref = np.mean([ssim_naive(x[0, c], y[0, c]) for c in range(2)])
    assert abs(float(ssim_mean(x, y).data) - ref) <= 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(11, 24), st.integers(11, 24), st.integers(0, 1000))
def test_ssim_symmetric_and_bounded(h, w, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.random((1, 1, h, w)), rng.random((1, 1, h, w))
    a, b = float(ssim_mean(x, y).data), float(ssim_mean(y, x).data)
    assert abs(a - b) <= 1e-12 and -1 <= a <= 1


def test_loss_closed_forms():
    t = RNG.random((1, 3, 16, 16))
    assert abs(loss_total(t, t).total) <= 1e-9
    res = loss_total(np.zeros((1, 3, 16, 16)), np.ones((1, 3, 16, 16)))
    ssim_const = 1e-4 / 1.0001
    assert res.l2 == 1.0
    assert abs(res.ssim_term - (1 - ssim_const)) <= 1e-7
    assert abs(res.total - (1 + 0.2 * (1 - ssim_const))) <= 1e-7
    assert abs(res.total - 1.19998) <= 1e-5


def test_loss_gradcheck():
    target = RNG.random((1, 3, 16, 16))
    pred = np.clip(target + 0.1 * RNG.standard_normal(target.shape), 0, 1)
    assert gradcheck(lambda p: loss_total(p, target).tensor, [pred], max_coords=64) <= 1e-4


# ---------------------------------------------------------------- metrics

def test_psnr_analytic():
    t = np.full((3, 8, 8), 0.5)
    assert abs(metrics.psnr(t + 0.1, t) - 20.0) <= 1e-12
    assert metrics.psnr(t, t) == metrics.PSNR_CAP


def test_mae255():
    t = np.zeros((3, 4, 4))
    assert abs(metrics.mae255(t + 2 / 255, t) - 2.0) <= 1e-12


def test_ms_ssim_identity_and_order():
    x = RNG.random((3, 64, 64))
    assert abs(metrics.ms_ssim(x, x) - 1) <= 1e-6
    mild = np.clip(x + 0.02 * RNG.standard_normal(x.shape), 0, 1)
    strong = np.clip(x + 0.2 * RNG.standard_normal(x.shape), 0, 1)
    assert metrics.ms_ssim(mild, x) > metrics.ms_ssim(strong, x)


def test_ciede2000_reference_pairs():
    got = metrics.ciede2000(PAIRS[:, :3].T, PAIRS[:, 3:6].T)
    assert len(PAIRS) == 34
    assert np.max(np.abs(got - PAIRS[:, 6])) <= 1e-4


def test_ciede2000_symmetric():
    a, b = PAIRS[:, :3].T, PAIRS[:, 3:6].T
    np.testing.assert_allclose(metrics.ciede2000(a, b), metrics.ciede2000(b, a), atol=1e-12)


def test_srgb_to_lab_against_skimage():
    rgb = RNG.random((3, 5, 7))
    ours = metrics.srgb_to_lab(rgb)
    ref = rgb2lab(rgb.transpose(1, 2, 0)).transpose(2, 0, 1)
    assert np.max(np.abs(ours - ref)) <= 1e-2
    np.testing.assert_allclose(metrics.srgb_to_lab(np.ones((3, 1, 1)))[:, 0, 0], [100, 0, 0], atol=1e-3)


def test_metrics_bundle():
    x = RNG.random((2, 3, 32, 32))
    m = metrics.metrics(x, x)
    assert set(m) == {"psnr", "ssim", "ms_ssim", "mae", "ciede2000"}
    assert m["psnr"] == 100.0 and m["mae"] == 0 and m["ciede2000"] == 0
    with pytest.raises(ValueError):
        metrics.psnr(x, x[:, :, :16])
