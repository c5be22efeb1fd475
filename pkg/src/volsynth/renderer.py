"""Alpha compositing of frustum-aligned RGBA volumes.

Three routes produce the same image:

* :func:`composite` over the output of
  :func:`~volsynth.volume.perspective_warp` (modular, differentiable path),
* :class:`AmortizedRenderer`, which prepares a volume once and renders any
  number of views with a fused warp-and-composite kernel,
* :func:`reference_render`, an independent per-ray quadrature used as the
  correctness oracle and speed baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .camera import (
    FrustumSpec,
    Intrinsics,
    Pose,
    camera_to_index_affine,
    canonical_pose,
    ray_directions,
    relative_pose,
)
from .validation import check_rgba
from .volume import (
    perspective_affine,
    perspective_warp,
    rigid_transform_volume,
    sample_points,
)

DEPTH_EPS = 1e-8


@dataclass(frozen=True)
class RenderOptions:
    """Rendering switches.

    ``samples_per_ray``, ``density_scale``, ``mode`` and ``jitter_seed`` only
    affect :func:`reference_render`.  In ``"matched"`` mode the sampled
    opacity is used directly per sample, which makes the quadrature identical
    to slice compositing; ``"density"`` treats it as a density and converts
    with ``1 - exp(-density_scale * a * delta)``.
    """

    background: tuple = (1.0, 1.0, 1.0)
    samples_per_ray: int | None = None
    density_scale: float = 1.0
    mode: str = "matched"
    jitter_seed: int | None = None

    def __post_init__(self):
        bg = tuple(float(x) for x in self.background)
        if len(bg) != 3 or min(bg) < 0.0 or max(bg) > 1.0:
            raise ValueError("background must be an RGB triple in [0, 1]")
        object.__setattr__(self, "background", bg)
        if self.samples_per_ray is not None and self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be at least 2")
        if self.density_scale <= 0:
            raise ValueError("density_scale must be positive")
        if self.mode not in ("matched", "density"):
            raise ValueError(f"unknown reference mode {self.mode!r}")


@dataclass
class RenderedImage:
    rgb: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray
    extras: dict = field(default_factory=dict, repr=False)


def transmittance(alpha):
    """Exclusive cumulative product of ``1 - alpha`` along axis 0."""
    one_minus = 1.0 - alpha
    T = np.empty_like(alpha)
    T[0] = 1.0
    np.cumprod(one_minus[:-1], axis=0, out=T[1:])
    return T


def composite(frustum_vol, opts: RenderOptions | None = None, frustum: FrustumSpec | None = None):
    """Front-to-back compositing along the depth axis of ``(4, d, h, w)``.

    Slice 0 is nearest.  ``frustum`` supplies metric slice depths for the
    expected-depth output; without it depth is reported in slice units.
    """
    opts = opts or RenderOptions()
    vol = check_rgba(frustum_vol, name="frustum volume")
    color, alpha = vol[:3], vol[3]
    T = transmittance(alpha)
    weights = T * alpha
    acc = weights.sum(axis=0)
    rgb = np.einsum("khw,ckhw->hwc", weights, color)
    bg = np.asarray(opts.background, dtype=rgb.dtype)
    rgb = rgb + (1.0 - acc)[..., None] * bg
    d = alpha.shape[0]
    z = frustum.slice_depths(d) if frustum is not None else np.arange(d) + 0.5
    depth = np.tensordot(z.astype(weights.dtype), weights, axes=(0, 0)) / np.maximum(acc, DEPTH_EPS)
    return RenderedImage(rgb, acc, depth, {"transmittance": T, "weights": weights})


def render_view(
    vol,
    source_pose: Pose,
    target_pose: Pose,
    k: Intrinsics,
    f: FrustumSpec,
    opts: RenderOptions | None = None,
    voxel_size=None,
    fused=True,
):
    """Render the source-aligned cube ``vol`` from ``target_pose``.

    With ``fused=True`` the rigid motion and the perspective warp share one
    resample.  ``fused=False`` runs them as two separate trilinear resamples,
    which interpolates twice and is slightly blurrier.
    """
    vol = check_rgba(vol)
    rel = relative_pose(source_pose, target_pose)
    if fused:
        warped = perspective_warp(vol, k, f, rel, voxel_size)
    else:
        vs = f.default_voxel_size(vol.shape[1]) if voxel_size is None else voxel_size
        moved = rigid_transform_volume(vol, rel, vs, center=(0.0, 0.0, f.center_depth))
        warped = perspective_warp(np.clip(moved, 0.0, 1.0), k, f, None, vs)
    return composite(warped, opts, f)


def _reference_depths(f: FrustumSpec, n, jitter_seed):
    if jitter_seed is None:
        return f.slice_depths(n)
    rng = np.random.default_rng(jitter_seed)
    u = rng.uniform(0.0, 1.0, size=n)
    return f.z_near + (np.arange(n) + u) / n * (f.z_far - f.z_near)


def reference_render(
    vol,
    pose: Pose | None,
    k: Intrinsics,
    f: FrustumSpec,
    opts: RenderOptions | None = None,
    voxel_size=None,
    chunk=2048,
):
    """Per-ray quadrature renderer.

    ``vol`` is a cube aligned with some camera (its center ``f.center_depth``
    in front of it); ``pose`` takes that camera's frame to the rendering
    camera (``None`` means identity).  Every ray is marched on its own: sample
    points are generated along it, mapped back into the cube and interpolated
    independently, then accumulated with transmittance.
    """
    opts = opts or RenderOptions()
    vol = check_rgba(vol)
    dtype = vol.dtype
    pose = pose or Pose.identity()
    n = opts.samples_per_ray or f.d_s
    vs = f.default_voxel_size(vol.shape[1]) if voxel_size is None else float(voxel_size)
    to_index = camera_to_index_affine(vol.shape[1:], vs, (0.0, 0.0, f.center_depth))
    Rt = pose.rotation.T
    t = pose.translation

    zs = _reference_depths(f, n, opts.jitter_seed)
    step = (f.z_far - f.z_near) / n
    dirs = ray_directions(k).reshape(-1, 3)
    bg = np.asarray(opts.background, dtype=dtype)
    n_rays = dirs.shape[0]
    rgb = np.empty((n_rays, 3), dtype=dtype)
    acc = np.empty(n_rays, dtype=dtype)
    dep = np.empty(n_rays, dtype=dtype)
    for start in range(0, n_rays, chunk):
        d = dirs[start:start + chunk]
        pts = d[:, None, :] * zs[None, :, None]            # target camera
        src = (pts - t) @ Rt.T                              # source camera
        idx = src @ to_index[:3, :3].T + to_index[:3, 3]
        samples = sample_points(vol, idx).astype(dtype, copy=False)   # (4, R, n)
        a = samples[3]
        if opts.mode == "density":
            delta = (step * np.linalg.norm(d, axis=-1))[:, None]
            a = 1.0 - np.exp(-opts.density_scale * a * delta)
        T = np.ones_like(a)
        T[:, 1:] = np.cumprod(1.0 - a[:, :-1], axis=1)
        w = (T * a).astype(dtype, copy=False)
        a_sum = w.sum(axis=1)
        rgb[start:start + chunk] = np.einsum("rn,crn->rc", w, samples[:3]) + (1.0 - a_sum)[:, None] * bg
        acc[start:start + chunk] = a_sum
        dep[start:start + chunk] = (w @ zs.astype(dtype)) / np.maximum(a_sum, DEPTH_EPS)
    h, w_ = k.height, k.width
    return RenderedImage(rgb.reshape(h, w_, 3), acc.reshape(h, w_), dep.reshape(h, w_))


class AmortizedRenderer:
    """Renders many views of one RGBA volume.

    Construction does the per-object work once: validation, a zero-padded
    channel-last copy of the volume, a table of interpolation cells with no
    opacity (skipped while marching, which leaves results unchanged), and the
    per-pixel ray table.  Each :meth:`render` call then only builds a 3x4
    matrix and runs the fused kernel.

    Parameters
    ----------
    vol : array (4, D, H, W)
        Cube aligned with a reference camera (see :func:`reference_render`).
    k, f : Intrinsics, FrustumSpec
    voxel_size : float, optional
        Defaults to spanning ``[z_near, z_far]`` with the cube's depth.
    background : RGB triple
    """

    def __init__(self, vol, k: Intrinsics, f: FrustumSpec, voxel_size=None, background=(1.0, 1.0, 1.0)):
        vol = check_rgba(vol)
        self.k = k
        self.f = f
        self.dims = vol.shape[1:]
        self.voxel_size = f.default_voxel_size(vol.shape[1]) if voxel_size is None else float(voxel_size)
        self.dtype = vol.dtype
        self._vol_pad, self._empty = _kernels.prepare_volume(vol)
        self._dirs = np.ascontiguousarray(ray_directions(k))
        self._zs = f.slice_depths()
        self._bg = np.asarray(background, dtype=np.float64)

    def render(self, pose: Pose | None = None):
        """Render through a camera ``pose`` relative to the volume's camera."""
        a = np.ascontiguousarray(perspective_affine(self.dims, self.f, pose, self.voxel_size))
        h, w = self.k.height, self.k.width
        rgb = np.empty((h, w, 3), dtype=self.dtype)
        alpha = np.empty((h, w), dtype=self.dtype)
        depth = np.empty((h, w), dtype=self.dtype)
        _kernels.render_fused(self._vol_pad, self._empty, self._dirs, self._zs, a, self._bg, rgb, alpha, depth)
        return RenderedImage(rgb, alpha, depth)

    def render_world(self, world_to_camera: Pose):
        """Render a world-frame volume (see :func:`canonical_pose`)."""
        return self.render(relative_pose(canonical_pose(self.f), world_to_camera))

    def render_many(self, poses):
        return [self.render(p) for p in poses]
