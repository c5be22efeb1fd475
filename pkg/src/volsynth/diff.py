"""Reverse-mode gradients for rendering and direct volume fitting.

The fitted quantity is an unconstrained logit volume; the RGBA volume is its
elementwise sigmoid.  Gradients flow only into volume values; cameras are
fixed.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .camera import FrustumSpec, Intrinsics, canonical_pose, ray_directions, relative_pose
from .errors import DimensionMismatch, EmptyViewSet, NonFiniteGradient
from .metrics import SsimConfig, render_loss_and_grad
from .renderer import RenderOptions, composite, transmittance
from .validation import check_dims, check_grid
from .volume import perspective_affine

log = logging.getLogger(__name__)


def composite_vjp(frustum_vol, upstream, background=(1.0, 1.0, 1.0)):
    """Gradient of composited RGB with respect to ``(color, alpha)`` slices.

    Parameters
    ----------
    frustum_vol : array (4, d, h, w)
    upstream : array (h, w, 3)
        dL/d(rgb).
    background : RGB triple used in the forward pass.

    Returns
    -------
    array (4, d, h, w)
    """
    vol = np.asarray(frustum_vol, dtype=np.float64)
    g = np.moveaxis(np.asarray(upstream, dtype=np.float64), -1, 0)   # (3, h, w)
    color, alpha = vol[:3], vol[3]
    T = transmittance(alpha)
    grad = np.empty_like(vol)
    grad[:3] = (T * alpha)[None] * g[:, None]
    # R: color seen from slice k onward (normalized by T_k), back to front
    R = np.broadcast_to(np.asarray(background, dtype=np.float64)[:, None, None], g.shape).copy()
    for k in range(alpha.shape[0] - 1, -1, -1):
        grad[3, k] = T[k] * np.einsum("chw,chw->hw", g, color[:, k] - R)
        R = alpha[k] * color[:, k] + (1.0 - alpha[k]) * R
    return grad


def resample_vjp(grid, sg, upstream):
    """Gradient of :func:`~volsynth.volume.resample` with respect to grid values."""
    shape = np.shape(grid)
    up = np.asarray(upstream)
    if up.shape != (shape[0],) + tuple(np.shape(sg)[:-1]):
        raise DimensionMismatch(f"upstream shape {up.shape} does not match the sample grid")
    return _kernels.resample_vjp_array(np.asarray(sg, dtype=np.float64), up, shape)


def grad_check(f, x, step=1e-4, max_coords=10_000, seed=0):
    """Max relative error between ``f``'s analytic gradient and central differences.

    ``f(x)`` must return ``(value, gradient)``.  Above ``max_coords``
    coordinates a seeded random subset is compared.  The relative error uses
    ``max(|a|, |b|, 1e-8)`` as denominator.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=np.float64)
    _, analytic = f(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise DimensionMismatch("gradient shape differs from input shape")
    flat = x.reshape(-1)
    idx = np.arange(flat.size)
    if flat.size > max_coords:
        idx = np.sort(np.random.default_rng(seed).choice(flat.size, max_coords, replace=False))
    numeric = np.empty(idx.size)
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)[0]
        flat[i] = orig - step
        fm = f(x)[0]
        flat[i] = orig
        numeric[n] = (fp - fm) / (2.0 * step)
    a = analytic.reshape(-1)[idx]
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(numeric))):
        raise NonFiniteGradient("non-finite gradient value encountered")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(a - numeric) / denom)) if idx.size else 0.0


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


class ParamVolume:
    """Unconstrained logits whose sigmoid is an RGBA volume."""

    def __init__(self, logits):
        self.logits = check_grid(logits, channels=4, name="logits")

    @classmethod
    def constant(cls, dims, alpha=0.05, color=0.5, dtype=np.float32):
        dims = check_dims(dims)
        la = dtype(logit(alpha))
        # keep the initial opacity at or below ``alpha`` so thresholding at
        # the same value does not count untouched voxels
        while sigmoid(np.array(la, dtype=dtype)) > alpha:
            la = np.nextafter(la, dtype(-np.inf))
        logits = np.empty((4,) + dims, dtype=dtype)
        logits[:3] = dtype(logit(color))
        logits[3] = la
        return cls(logits)

    def value(self):
        return sigmoid(self.logits).astype(self.logits.dtype, copy=False)

    def backprop(self, grad_value, value=None):
        s = self.value() if value is None else value
        return grad_value * s * (1.0 - s)


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    iterations: int = 500
    lambda_ssim: float = 0.05
    seed: int = 0
    batch_views: int | None = None
    eps: float = 1e-8
    init_alpha: float = 0.05
    init_color: float = 0.5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.lambda_ssim < 0:
            raise ValueError("lambda_ssim must be non-negative")
        if self.batch_views is not None and self.batch_views < 1:
            raise ValueError("batch_views must be positive")


class Adam:
    """Adam with bias correction, updating one array in place."""

    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float32):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.t = 0

    def step(self, param, grad):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * grad
        self.v *= b2
        self.v += (1.0 - b2) * grad * grad
        m_hat = self.m / (1.0 - b1**self.t)
        v_hat = self.v / (1.0 - b2**self.t)
        param -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(param.dtype, copy=False)


@dataclass
class LossRecord:
    iteration: int
    l2: float
    ssim_term: float
    total: float


@dataclass
class FitResult:
    volume: np.ndarray
    trace: list = field(default_factory=list)
    logits: np.ndarray | None = field(default=None, repr=False)

    @property
    def losses(self):
        return np.array([r.total for r in self.trace])


def write_loss_csv(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "l2", "ssim_term", "total"])
        for r in trace:
            writer.writerow([r.iteration, repr(r.l2), repr(r.ssim_term), repr(r.total)])


class ViewRenderer:
    """Differentiable renderer for one fixed camera of a world-frame volume.

    Sample positions are regenerated from a 3x4 matrix on every pass, so a
    renderer holds almost no memory; the forward pass keeps the interpolated
    samples for the backward pass.  Values may be given as ``(4, D, H, W)``
    or, via the ``*_padded`` methods, as the zero-bordered channel-last
    layout the kernels use.
    """

    def __init__(self, dims, pose, k: Intrinsics, f: FrustumSpec, voxel_size=None, background=(1.0, 1.0, 1.0)):
        self.dims = check_dims(dims)
        rel = relative_pose(canonical_pose(f), pose)
        self.affine = np.ascontiguousarray(perspective_affine(self.dims, f, rel, voxel_size))
        self.dirs = np.ascontiguousarray(ray_directions(k))
        self.zs = f.slice_depths()
        self.background = np.asarray(background, dtype=np.float64)
        self.frustum = f

    def forward_padded(self, val_pad):
        h, w, _ = self.dirs.shape
        samples = np.empty((h, w, self.zs.size, 4), dtype=val_pad.dtype)
        rgb = np.empty((h, w, 3))
        _kernels.fit_forward(val_pad, self.dirs, self.zs, self.affine, self.background, samples, rgb)
        return samples, rgb

    def backward_padded(self, samples, grad_rgb, grad_pad):
        """Accumulate the value gradient into ``grad_pad`` in place."""
        g = np.ascontiguousarray(grad_rgb, dtype=np.float64)
        _kernels.fit_backward(self.dirs, self.zs, self.affine, self.background, samples, g, grad_pad)

    def forward(self, value):
        """Return ``(samples, rgb)`` for a ``(4, D, H, W)`` value volume."""
        return self.forward_padded(_kernels.pad_channels_last(np.asarray(value)))

    def backward(self, value, samples, grad_rgb):
        value = np.asarray(value)
        grad_pad = np.zeros((self.dims[0] + 2, self.dims[1] + 2, self.dims[2] + 2, 4), dtype=value.dtype)
        self.backward_padded(samples, grad_rgb, grad_pad)
        return _kernels.unpad_channels_first(grad_pad)


def render_loss_grad(value, renderer: ViewRenderer, target, lambda_ssim, ssim_cfg=None):
    """Loss of one view and its gradient with respect to the RGBA values."""
    samples, rgb = renderer.forward(value)
    total, l2, s_term, g_rgb = render_loss_and_grad(rgb, target, lambda_ssim, ssim_cfg)
    return total, l2, s_term, renderer.backward(value, samples, g_rgb)


def fit_volume(
    images,
    poses,
    k: Intrinsics,
    f: FrustumSpec,
    cfg: OptimConfig | None = None,
    dims=(64, 64, 64),
    voxel_size=None,
    background=(1.0, 1.0, 1.0),
    ssim_cfg: SsimConfig | None = None,
    callback=None,
):
    """Fit a world-frame RGBA volume to posed images with Adam.

    Minimizes the per-view ``mse + lambda * (1 - ssim)`` averaged over the
    views of each step (all views unless ``cfg.batch_views`` is set).
    ``trace[i]`` holds the loss evaluated before the ``i``-th update.
    """
    cfg = cfg or OptimConfig()
    images = [np.asarray(im, dtype=np.float64) for im in images]
    poses = list(poses)
    if len(images) < 2:
        raise EmptyViewSet(f"fitting needs at least two training views, got {len(images)}")
    if len(images) != len(poses):
        raise DimensionMismatch("number of images and poses differ")
    for im in images:
        if im.shape != (k.height, k.width, 3):
            raise DimensionMismatch(f"image shape {im.shape} does not match intrinsics {k.height}x{k.width}")
    dims = check_dims(dims)
    rng = np.random.default_rng(cfg.seed)
    renderers = [ViewRenderer(dims, p, k, f, voxel_size, background) for p in poses]
    param = ParamVolume.constant(dims, cfg.init_alpha, cfg.init_color)
    opt = Adam(param.logits.shape, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    n = len(images)
    batch = n if cfg.batch_views is None else min(cfg.batch_views, n)
    order, cursor = rng.permutation(n), 0
    trace = []
    for it in range(cfg.iterations):
        if batch == n:
            chosen = range(n)
        else:
            if cursor + batch > n:
                order, cursor = rng.permutation(n), 0
            chosen = order[cursor:cursor + batch]
            cursor += batch
        value = param.value()
        val_pad = _kernels.pad_channels_last(value)
        grad_pad = np.zeros_like(val_pad)
        tot = l2 = st = 0.0
        for v in chosen:
            samples, rgb = renderers[v].forward_padded(val_pad)
            t_, l_, s_, g_rgb = render_loss_and_grad(rgb, images[v], cfg.lambda_ssim, ssim_cfg)
            renderers[v].backward_padded(samples, g_rgb, grad_pad)
            tot, l2, st = tot + t_, l2 + l_, st + s_
        grad = _kernels.unpad_channels_first(grad_pad)
        m = len(chosen)
        rec = LossRecord(it, l2 / m, st / m, tot / m)
        trace.append(rec)
        if callback is not None:
            callback(rec)
        if it % 50 == 0:
            log.debug("iter %d loss %.6g", it, rec.total)
        opt.step(param.logits, param.backprop(grad / m, value))
    return FitResult(param.value(), trace, param.logits)


def gradient_suite(seed=0, size=(4, 6, 6, 6), corrupt=False):
    """Finite-difference checks of every analytic gradient (float64).

    Returns a list of ``(name, max_relative_error)``.  ``corrupt`` perturbs
    the compositing VJP to confirm the harness catches a wrong gradient.
    """
    from .camera import Intrinsics as _K, random_pose
    from .metrics import ssim_and_grad

    rng = np.random.default_rng(seed)
    c, d, h, w = size
    img = max(12, h)
    results = []

    def rand_rgba(shape):
        v = rng.uniform(0.05, 0.95, size=shape)
        v[3] = rng.uniform(0.1, 0.9, size=shape[1:])
        return v

    vjp = composite_vjp
    if corrupt:
        def vjp(vol, up, bg=(1.0, 1.0, 1.0)):
            g = composite_vjp(vol, up, bg)
            g[3] *= 1.01
            return g

    frustum = rand_rgba((4, d, h, w))
    up = rng.normal(size=(h, w, 3))
    bg = tuple(rng.uniform(0, 1, size=3))
    opts = RenderOptions(background=bg)

    def f_comp(x):
        return float(np.sum(composite(x, opts).rgb * up)), vjp(x, up, bg)

    results.append(("composite_vjp", grad_check(f_comp, frustum)))

    grid = rng.normal(size=(c, d, h, w))
    sg = rng.uniform(-1.0, np.array([d, h, w], dtype=float), size=(d, h, w, 3))
    up_r = rng.normal(size=(c, d, h, w))

    def f_res(x):
        out = _kernels.resample_array(x, sg)
        return float(np.sum(out * up_r)), resample_vjp(x, sg, up_r)

    results.append(("resample_vjp", grad_check(f_res, grid)))

    a = rng.uniform(0.0, 1.0, size=(img, img, 3))
    b = np.clip(a + rng.normal(scale=0.2, size=a.shape), 0.0, 1.0)
    results.append(("ssim_grad", grad_check(lambda x: ssim_and_grad(x, b), a)))

    k = _K.centered(img, img, float(img))
    fr = FrustumSpec(2.0, 6.0, d)
    pose = canonical_pose(fr) @ random_pose(rng, max_angle=0.6)
    target = rng.uniform(0.0, 1.0, size=(img, img, 3))
    renderer = ViewRenderer((d, h, w), pose, k, fr, background=bg)

    def f_loss(x):
        total, _, _, g = render_loss_grad(x, renderer, target, 0.05)
        if corrupt:
            g[3] *= 1.01
        return total, g

    results.append(("render_loss_grad", grad_check(f_loss, rand_rgba((4, d, h, w)))))
    return results
