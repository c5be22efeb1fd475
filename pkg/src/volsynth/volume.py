"""Voxel grids and the resampling operations built on trilinear sampling.

Volumes are plain arrays of shape ``(C, D, H, W)``; an RGBA volume has four
channels with opacity last.  A sample grid is an array of shape
``(d, h, w, 3)`` holding fractional source indices in ``(kd, ki, kj)``
order.  Every resampler pulls from its input (inverse warping) and treats
voxels outside the grid as zero.
"""

from __future__ import annotations

import struct

import numpy as np

from . import _kernels
from .camera import (
    FrustumSpec,
    Intrinsics,
    Pose,
    camera_to_index_affine,
    cube_center_index,
    frustum_grid,
    invert_pose,
    project,
    relative_pose,
)
from .errors import CorruptHeader, EmptyViewSet, UnsupportedFormat
from .validation import check_dims, check_grid

# (kd, ki, kj) offsets <-> camera (x, y, z); symmetric and self-inverse
_DHW_TO_XYZ = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])


def trilinear_sample(grid, point):
    """Interpolate all channels of ``grid`` at one fractional index ``point``."""
    grid = np.asarray(grid)
    C, D, H, W = grid.shape
    z, y, x = (float(v) for v in point)
    z0, y0, x0 = int(np.floor(z)), int(np.floor(y)), int(np.floor(x))
    fz, fy, fx = z - z0, y - y0, x - x0
    out = np.zeros(C, dtype=np.result_type(grid.dtype, np.float32))
    for dz, wz in ((0, 1.0 - fz), (1, fz)):
        for dy, wy in ((0, 1.0 - fy), (1, fy)):
            for dx, wx in ((0, 1.0 - fx), (1, fx)):
                zi, yi, xi = z0 + dz, y0 + dy, x0 + dx
                if 0 <= zi < D and 0 <= yi < H and 0 <= xi < W:
                    out += wz * wy * wx * grid[:, zi, yi, xi]
    return out


def sample_points(grid, coords):
    """Vectorized trilinear sampling of ``grid`` at ``coords (..., 3)``.

    Pure NumPy gather; returns an array of shape ``(C, ...)``.  Used where
    an implementation independent of the compiled kernels is wanted.
    """
    grid = np.asarray(grid)
    C, D, H, W = grid.shape
    coords = np.asarray(coords)
    lead = coords.shape[:-1]
    c = coords.reshape(-1, 3)
    base = np.floor(c)
    frac = (c - base).astype(np.result_type(grid.dtype, np.float32), copy=False)
    base = base.astype(np.int64)
    flat = grid.reshape(C, -1)
    out = np.zeros((C, c.shape[0]), dtype=frac.dtype)
    for dz in (0, 1):
        zi = base[:, 0] + dz
        wz = frac[:, 0] if dz else 1.0 - frac[:, 0]
        for dy in (0, 1):
            yi = base[:, 1] + dy
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            for dx in (0, 1):
                xi = base[:, 2] + dx
                wx = frac[:, 2] if dx else 1.0 - frac[:, 2]
                ok = (zi >= 0) & (zi < D) & (yi >= 0) & (yi < H) & (xi >= 0) & (xi < W)
                lin = (np.clip(zi, 0, D - 1) * H + np.clip(yi, 0, H - 1)) * W + np.clip(xi, 0, W - 1)
                out += flat[:, lin] * np.where(ok, wz * wy * wx, 0.0)
    return out.reshape((C,) + lead)


def identity_sample_grid(dims):
    d, h, w = check_dims(dims)
    kd, ki, kj = np.meshgrid(np.arange(d), np.arange(h), np.arange(w), indexing="ij")
    return np.stack([kd, ki, kj], axis=-1).astype(np.float64)


def resample(grid, sg):
    """Output voxel ``v`` is ``trilinear_sample(grid, sg[v])``."""
    grid = check_grid(grid)
    sg = np.asarray(sg)
    if sg.ndim != 4 or sg.shape[-1] != 3:
        raise ValueError(f"sample grid must have shape (d, h, w, 3), got {sg.shape}")
    return _kernels.resample_array(grid, sg)


def inverse_project(features, k: Intrinsics, f: FrustumSpec, out_dims, voxel_size=None):
    """Back-project a ``(C, h, w)`` feature map into a camera-aligned cube.

    Each cube voxel center is projected into the image and takes the
    bilinearly interpolated feature there, so the result is constant along
    camera rays.  Voxels projecting outside the image (or lying behind the
    camera) are zero.  The feature map may be smaller than the image; it is
    stretched over the full image plane.
    """
    feats = np.asarray(features)
    if feats.ndim != 3:
        raise ValueError("features must have shape (C, h, w)")
    out_dims = check_dims(out_dims)
    vs = f.default_voxel_size(out_dims[0]) if voxel_size is None else float(voxel_size)
    pts = cube_points(out_dims, vs, (0.0, 0.0, f.center_depth))
    z = pts[..., 2]
    front = z > 1e-9
    safe = np.where(front[..., None], pts, np.array([0.0, 0.0, 1.0]))
    uv = project(k, safe)
    fh, fw = feats.shape[1:]
    # continuous pixel coords -> feature-map indices (centers at +0.5)
    row = uv[..., 1] * (fh / k.height) - 0.5
    col = uv[..., 0] * (fw / k.width) - 0.5
    coords = np.stack([np.zeros_like(row), row, col], axis=-1)
    out = sample_points(feats[:, None], coords)
    out = np.where(front[None], out, 0.0)
    return out.astype(np.result_type(feats.dtype, np.float32), copy=False)


def cube_points(dims, voxel_size, center):
    """Camera-space centers of a cube's voxels, shape ``(d, h, w, 3)`` in xyz."""
    q = identity_sample_grid(dims) - cube_center_index(dims)
    return np.asarray(center, dtype=np.float64) + voxel_size * (q @ _DHW_TO_XYZ.T)


def rigid_sample_grid(dims, p: Pose, voxel_size=1.0, center=None):
    """Sample grid realizing ``T(p, V)`` by inverse warping.

    ``p`` acts on a frame in which the cube center sits at ``center``
    (default: the origin, so the volume center is the rotation pivot).
    """
    dims = check_dims(dims)
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    center = np.zeros(3) if center is None else np.asarray(center, dtype=np.float64)
    c_idx = cube_center_index(dims)
    Rt = p.rotation.T
    M = _DHW_TO_XYZ
    r_idx = M @ Rt @ M
    offset = M @ (Rt @ (center - p.translation) - center) / voxel_size
    q = identity_sample_grid(dims) - c_idx
    return q @ r_idx.T + offset + c_idx


def rigid_transform_volume(vol, p: Pose, voxel_size=1.0, center=None):
    """Apply a rigid transform to a volume: ``out(x) = vol(p^-1 x)``."""
    vol = check_grid(vol)
    return resample(vol, rigid_sample_grid(vol.shape[1:], p, voxel_size, center))


def perspective_affine(vol_dims, f: FrustumSpec, pose: Pose | None = None, voxel_size=None):
    """3x4 map from target-camera points to fractional indices of the cube.

    The cube is aligned with (and centered ``f.center_depth`` in front of) the
    camera it was expressed in; ``pose`` takes that camera's frame to the
    target camera.  Rigid motion and cube indexing are folded into a single
    matrix so warping needs one resample.
    """
    vol_dims = check_dims(vol_dims)
    vs = f.default_voxel_size(vol_dims[0]) if voxel_size is None else float(voxel_size)
    a = camera_to_index_affine(vol_dims, vs, (0.0, 0.0, f.center_depth))
    if pose is not None:
        a = a @ invert_pose(pose).matrix()
    return a[:3]


def perspective_grid(vol_dims, k: Intrinsics, f: FrustumSpec, pose=None, voxel_size=None, out_dims=None):
    """Sample grid mapping frustum voxels ``(kd, i, j)`` into the cube."""
    pts = frustum_grid(k, f, out_dims)
    a = perspective_affine(vol_dims, f, pose, voxel_size)
    return pts @ a[:, :3].T + a[:, 3]


def perspective_warp(vol, k: Intrinsics, f: FrustumSpec, pose=None, voxel_size=None, out_dims=None):
    """Resample an object cube onto the target camera's viewing frustum.

    Output voxel ``(kd, i, j)`` lies on the ray through pixel ``(i, j)`` at
    the ``kd``-th slice depth, so compositing along axis 1 follows camera
    rays.  ``pose`` optionally applies a rigid motion in the same resample.
    """
    vol = check_grid(vol)
    return resample(vol, perspective_grid(vol.shape[1:], k, f, pose, voxel_size, out_dims))


def aggregate_latents(volumes, origin_index=0, voxel_size=1.0, center=None):
    """Align per-view latent cubes to one view's frame and average them.

    ``volumes`` is a sequence of ``(grid, pose)`` pairs with world-to-camera
    poses; ``center`` is the camera-space position of every cube's center.
    """
    volumes = list(volumes)
    if not volumes:
        raise EmptyViewSet("need at least one view to aggregate")
    if not 0 <= origin_index < len(volumes):
        raise IndexError("origin_index out of range")
    shape = np.shape(volumes[0][0])
    origin_pose = volumes[origin_index][1]
    acc = None
    for i, (grid, pose) in enumerate(volumes):
        grid = check_grid(grid)
        if grid.shape != shape:
            raise ValueError("all latent volumes must share channels and dims")
        if i == origin_index:
            aligned = grid
        else:
            rel = relative_pose(pose, origin_pose)
            aligned = rigid_transform_volume(grid, rel, voxel_size, center)
        acc = aligned.astype(np.float64) if acc is None else acc + aligned
    return (acc / len(volumes)).astype(np.result_type(np.asarray(volumes[0][0]).dtype, np.float32))


_VOXL_MAGIC = b"VOXL"
_VOXL_HEADER = struct.Struct("<4sBBxx4H")


def write_voxl(path, vol):
    """Write a volume in the VOXL1 format (little-endian float32, C order)."""
    arr = np.asarray(vol)
    if arr.ndim != 4:
        raise ValueError("VOXL1 stores (C, D, H, W) volumes")
    if max(arr.shape) > 0xFFFF:
        raise ValueError("VOXL1 dimensions are limited to 65535")
    header = _VOXL_HEADER.pack(_VOXL_MAGIC, 1, 0, *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_voxl(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _VOXL_HEADER.size:
        raise CorruptHeader(f"{path}: file shorter than the VOXL1 header")
    magic, version, dtype, c, d, h, w = _VOXL_HEADER.unpack_from(blob)
    if magic != _VOXL_MAGIC:
        raise UnsupportedFormat(f"{path}: not a VOXL file")
    if version != 1 or dtype != 0:
        raise UnsupportedFormat(f"{path}: unsupported VOXL version {version} / dtype {dtype}")
    n = c * d * h * w
    payload = blob[_VOXL_HEADER.size:]
    if len(payload) != 4 * n:
        raise CorruptHeader(f"{path}: expected {4 * n} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(c, d, h, w).astype(np.float32)
