"""Image losses and evaluation metrics.

Images are ``(H, W, C)`` float arrays in ``[0, 1]``; 2D arrays are treated
as single-channel.  SSIM uses Gaussian-weighted local statistics evaluated
at "valid" window positions only (no padding).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, TooSmall
from .validation import check_dims

PSNR_CAP = 99.0


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    @property
    def c1(self):
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self):
        return (self.k2 * self.data_range) ** 2

    def kernel1d(self):
        x = np.arange(self.window) - (self.window - 1) / 2.0
        g = np.exp(-(x**2) / (2.0 * self.sigma**2))
        return g / g.sum()

    def kernel2d(self):
        g = self.kernel1d()
        return np.outer(g, g)


def _as_hwc(img):
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise DimensionMismatch(f"expected an (H, W[, C]) image, got shape {arr.shape}")
    return arr


def _pair(a, b):
    a, b = _as_hwc(a), _as_hwc(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _filter_valid(x, g):
    """Separable 'valid' correlation of ``x (H, W, C)`` with ``g`` on both image axes."""
    n = len(g)
    h, w = x.shape[0] - n + 1, x.shape[1] - n + 1
    rows = np.zeros((h,) + x.shape[1:])
    for k in range(n):
        rows += g[k] * x[k:k + h]
    out = np.zeros((h, w) + x.shape[2:])
    for k in range(n):
        out += g[k] * rows[:, k:k + w]
    return out


def _filter_valid_T(y, g, shape):
    """Adjoint of :func:`_filter_valid`."""
    n = len(g)
    h, w = y.shape[:2]
    rows = np.zeros((h, shape[1]) + y.shape[2:])
    for k in range(n):
        rows[:, k:k + w] += g[k] * y
    out = np.zeros(shape)
    for k in range(n):
        out[k:k + h] += g[k] * rows
    return out


def _ssim_stats(a, b, cfg):
    if min(a.shape[:2]) < cfg.window:
        raise TooSmall(f"image {a.shape[:2]} smaller than the {cfg.window}x{cfg.window} window")
    g = cfg.kernel1d()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    e_aa = _filter_valid(a * a, g)
    e_bb = _filter_valid(b * b, g)
    e_ab = _filter_valid(a * b, g)
    A1 = 2.0 * mu_a * mu_b + cfg.c1
    A2 = 2.0 * (e_ab - mu_a * mu_b) + cfg.c2
    B1 = mu_a**2 + mu_b**2 + cfg.c1
    B2 = (e_aa - mu_a**2) + (e_bb - mu_b**2) + cfg.c2
    return mu_a, mu_b, A1, A2, B1, B2


def ssim_map(a, b, cfg: SsimConfig | None = None):
    cfg = cfg or SsimConfig()
    a, b = _pair(a, b)
    _, _, A1, A2, B1, B2 = _ssim_stats(a, b, cfg)
    return (A1 * A2) / (B1 * B2)


def ssim(a, b, cfg: SsimConfig | None = None):
    """Mean structural similarity over valid window positions and channels."""
    return float(ssim_map(a, b, cfg).mean())


def ssim_and_grad(a, b, cfg: SsimConfig | None = None):
    """Mean SSIM and its analytic gradient with respect to ``a``."""
    cfg = cfg or SsimConfig()
    a, b = _pair(a, b)
    mu_a, mu_b, A1, A2, B1, B2 = _ssim_stats(a, b, cfg)
    den = B1 * B2
    S = A1 * A2 / den
    scale = 1.0 / S.size
    d_mu = (2.0 * mu_b * A2 - 2.0 * mu_b * A1) / den - S * (2.0 * mu_a / B1 - 2.0 * mu_a / B2)
    d_eaa = -S / B2
    d_eab = 2.0 * A1 / den
    g = cfg.kernel1d()
    grad = _filter_valid_T(d_mu * scale, g, a.shape)
    grad += 2.0 * a * _filter_valid_T(d_eaa * scale, g, a.shape)
    grad += b * _filter_valid_T(d_eab * scale, g, a.shape)
    return float(S.mean()), grad


def l2_loss(a, b):
    """Mean squared difference over pixels and channels."""
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def render_loss(pred, target, lambda_ssim=0.05, cfg: SsimConfig | None = None):
    """``l2 + lambda * (1 - ssim)``."""
    value = l2_loss(pred, target)
    if lambda_ssim:
        value += lambda_ssim * (1.0 - ssim(pred, target, cfg))
    return value


def render_loss_and_grad(pred, target, lambda_ssim=0.05, cfg: SsimConfig | None = None):
    """Returns ``(total, l2, ssim_term, grad_wrt_pred)``."""
    p, t = _pair(pred, target)
    diff = p - t
    l2 = float(np.mean(diff**2))
    grad = 2.0 * diff / diff.size
    ssim_term = 0.0
    if lambda_ssim:
        s, gs = ssim_and_grad(p, t, cfg)
        ssim_term = 1.0 - s
        grad -= lambda_ssim * gs
    grad = grad.reshape(np.shape(pred))
    return l2 + lambda_ssim * ssim_term, l2, ssim_term, grad


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB, capped at 99 dB for identical inputs."""
    mse = l2_loss(a, b)
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak**2 / mse)))


def binarize_alpha(vol, tau=0.05):
    """Occupancy of an RGBA volume: voxels with opacity strictly above ``tau``."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    vol = np.asarray(vol)
    if vol.ndim != 4 or vol.shape[0] != 4:
        raise DimensionMismatch("expected a (4, D, H, W) RGBA volume")
    return vol[3] > tau


def miou(a, b):
    """Intersection over union of two boolean grids (1.0 when both are empty)."""
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionMismatch(f"occupancy shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def occupancy_resample(grid, out_dims):
    """Nearest-neighbor resampling aligned on voxel centers."""
    grid = np.asarray(grid, dtype=bool)
    out_dims = check_dims(out_dims)
    idx = [
        np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64), n_in - 1)
        for n_in, n_out in zip(grid.shape, out_dims)
    ]
    return grid[np.ix_(*idx)]


def write_view_metrics_csv(path, rows):
    """``rows``: iterable of ``(view_id, psnr, ssim)``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["view_id", "psnr", "ssim"])
        for view_id, p, s in rows:
            writer.writerow([view_id, f"{p:.6f}", f"{s:.6f}"])


def write_scene_metrics_csv(path, miou_value, threshold):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["miou", "threshold"])
        writer.writerow([f"{miou_value:.6f}", threshold])
