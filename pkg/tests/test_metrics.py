import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volsynth.errors import DimensionMismatch, TooSmall
from volsynth.metrics import (
    SsimConfig,
    binarize_alpha,
    l2_loss,
    miou,
    occupancy_resample,
    psnr,
    render_loss,
    render_loss_and_grad,
    ssim,
    ssim_and_grad,
    write_scene_metrics_csv,
    write_view_metrics_csv,
)

CFG = SsimConfig()
C1 = (0.01 * 1.0) ** 2


def ssim_brute(a, b, cfg=CFG):
    """Direct per-window SSIM with the explicit 2D Gaussian window."""
    w = cfg.kernel2d()
    n = cfg.window
    H, W, C = a.shape
    vals = []
    for c in range(C):
        for i in range(H - n + 1):
            for j in range(W - n + 1):
                pa = a[i:i + n, j:j + n, c]
                pb = b[i:i + n, j:j + n, c]
                ma, mb = (w * pa).sum(), (w * pb).sum()
                va = (w * (pa - ma) ** 2).sum()
                vb = (w * (pb - mb) ** 2).sum()
                cov = (w * (pa - ma) * (pb - mb)).sum()
                vals.append(
                    (2 * ma * mb + cfg.c1) * (2 * cov + cfg.c2)
                    / ((ma**2 + mb**2 + cfg.c1) * (va + vb + cfg.c2))
                )
    return float(np.mean(vals))


def test_ssim_window_normalized():
    assert CFG.kernel2d().sum() == pytest.approx(1.0, abs=1e-9)
    assert CFG.c1 > 0 and CFG.c2 > 0


def test_l2_examples():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(5, 6, 3))
    assert l2_loss(x, x) == 0.0
    assert l2_loss(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.5)) == pytest.approx(0.25)
    y = rng.uniform(size=(5, 6, 3))
    total = 0.0
    for i in range(5):
        for j in range(6):
            for c in range(3):
                total += (x[i, j, c] - y[i, j, c]) ** 2
    assert l2_loss(x, y) == pytest.approx(total / 90, abs=1e-9)
    with pytest.raises(DimensionMismatch):
        l2_loss(x, y[:4])


def test_ssim_identity_and_constant_case():
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(16, 16, 3))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-6)
    a, b = np.zeros((12, 12, 3)), np.ones((12, 12, 3))
    assert ssim(a, b) == pytest.approx(C1 / (1 + C1), rel=1e-9)
    assert ssim(a, b) == pytest.approx(9.999e-5, rel=1e-3)
    a, b = np.full((12, 12, 1), 0.3), np.full((12, 12, 1), 0.8)
    assert ssim(a, b) == pytest.approx((2 * 0.3 * 0.8 + C1) / (0.09 + 0.64 + C1), rel=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(14, 13, 2))
    b = np.clip(a + rng.normal(scale=0.3, size=a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim_brute(a, b), abs=1e-6)


def test_ssim_errors():
    with pytest.raises(TooSmall):
        ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))
    with pytest.raises(DimensionMismatch):
        ssim(np.zeros((12, 12, 3)), np.zeros((12, 13, 3)))


@given(st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_ssim_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 12, 12, 3))
    s = ssim(a, b)
    assert s == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1.0 <= s <= 1.0


def test_ssim_gradient_finite_differences():
    rng = np.random.default_rng(3)
    a = rng.uniform(size=(12, 12, 2))
    b = rng.uniform(size=(12, 12, 2))
    _, g = ssim_and_grad(a, b)
    h = 1e-5
    for idx in [(0, 0, 0), (5, 6, 1), (11, 11, 0), (3, 9, 1)]:
        ap, am = a.copy(), a.copy()
        ap[idx] += h
        am[idx] -= h
        fd = (ssim(ap, b) - ssim(am, b)) / (2 * h)
        assert g[idx] == pytest.approx(fd, rel=1e-5, abs=1e-10)


def test_render_loss_examples():
    x = np.random.default_rng(4).uniform(size=(12, 12, 3))
    assert render_loss(x, x, 0.05) == pytest.approx(0.0, abs=1e-12)
    y = np.random.default_rng(5).uniform(size=(12, 12, 3))
    assert render_loss(x, y, 0.0) == l2_loss(x, y)
    a, b = np.zeros((12, 12, 3)), np.ones((12, 12, 3))
    assert render_loss(a, b, 0.05) == pytest.approx(1 + 0.05 * (1 - C1 / (1 + C1)), rel=1e-12)
    total, l2, s_term, grad = render_loss_and_grad(a, b, 0.05)
    assert total == pytest.approx(render_loss(a, b, 0.05))
    assert grad.shape == a.shape


def test_psnr_examples():
    x = np.zeros((10, 10, 3))
    assert psnr(x, x) == 99.0
    assert psnr(x, x + 0.1) == pytest.approx(20.0, abs=1e-6)
    assert psnr(x, x + 0.5) == pytest.approx(10 * math.log10(4), abs=1e-9)
    assert psnr(x, x + 0.5) == pytest.approx(6.0206, abs=1e-4)


@given(st.floats(1e-6, 0.9), st.floats(1e-6, 0.9))
@settings(max_examples=50, deadline=None)
def test_psnr_symmetric_and_monotone(d1, d2):
    x = np.zeros((4, 4, 3))
    assert psnr(x, x + d1) == psnr(x + d1, x)
    if d1 < d2:
        assert psnr(x, x + d1) > psnr(x, x + d2)


def test_binarize_alpha_strict():
    v = np.zeros((4, 2, 2, 2))
    assert not binarize_alpha(v, 0.05).any()
    v[3] = 0.05
    assert not binarize_alpha(v, 0.05).any()
    v[3, 0, 0, 0] = 0.0500001
    assert binarize_alpha(v, 0.05).sum() == 1
    rng = np.random.default_rng(0)
    v = rng.uniform(size=(4, 3, 3, 3))
    occ = binarize_alpha(v, 0.4)
    for idx in np.ndindex(3, 3, 3):
        assert occ[idx] == (v[(3,) + idx] > 0.4)
    with pytest.raises(ValueError):
        binarize_alpha(v, 1.5)


@given(st.integers(0, 2**31), st.floats(0.01, 0.98), st.floats(0.01, 0.98))
@settings(max_examples=30, deadline=None)
def test_binarize_count_non_increasing_in_tau(seed, t1, t2):
    v = np.random.default_rng(seed).uniform(size=(4, 4, 4, 4))
    lo, hi = sorted((t1, t2))
    assert binarize_alpha(v, hi).sum() <= binarize_alpha(v, lo).sum()


def test_miou_examples():
    a = np.zeros((8, 8, 8), bool)
    a[1:5, 1:5, 1:5] = True
    assert miou(a, a) == 1.0
    b = np.zeros_like(a)
    b[6:, 6:, 6:] = True
    assert miou(a, b) == 0.0
    shifted = np.zeros_like(a)
    shifted[3:7, 1:5, 1:5] = True
    # overlap 2*4*4 = 32, union 64 + 64 - 32 = 96
    assert miou(a, shifted) == 32 / 96
    assert miou(np.zeros_like(a), np.zeros_like(a)) == 1.0
    with pytest.raises(DimensionMismatch):
        miou(a, a[:4])


@given(st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_miou_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 5, 5, 5)) > 0.5
    assert miou(a, b) == miou(b, a)
    assert miou(a, a) == 1.0


def test_miou_monotone_in_symmetric_difference():
    rng = np.random.default_rng(7)
    union = rng.uniform(size=(6, 6, 6)) > 0.3
    idx = np.argwhere(union)
    rng.shuffle(idx)
    a = union.copy()
    prev = 1.0
    for n in range(0, len(idx), 5):
        b = union.copy()
        for i in idx[:n]:
            b[tuple(i)] = False   # grows the symmetric difference, union fixed
        cur = miou(a, b)
        assert cur <= prev
        prev = cur


def test_occupancy_resample():
    g = np.zeros((2, 2, 2), bool)
    g[1, 0, 1] = True
    up = occupancy_resample(g, (4, 4, 4))
    assert up.sum() == 8 and up[2:4, 0:2, 2:4].all()
    np.testing.assert_array_equal(occupancy_resample(g, (2, 2, 2)), g)
    r = np.random.default_rng(0).uniform(size=(5, 6, 7)) > 0.5
    np.testing.assert_array_equal(occupancy_resample(occupancy_resample(r, (10, 12, 14)), (5, 6, 7)), r)


def test_metric_csv(tmp_path):
    write_view_metrics_csv(tmp_path / "v.csv", [("0001", 30.5, 0.9), ("0002", 25.0, 0.8)])
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "view_id,psnr,ssim" and len(lines) == 3
    write_scene_metrics_csv(tmp_path / "s.csv", 0.75, 0.05)
    assert (tmp_path / "s.csv").read_text().splitlines() == ["miou,threshold", "0.750000,0.05"]
