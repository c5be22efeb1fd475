"""Pinhole cameras, rigid poses and cube/frustum sampling grids.

Conventions: right-handed camera frame looking along +z with x to the right
and y pointing down, so image rows follow +y and columns follow +x.  Pixel
``(i, j)`` has its center at continuous coordinate ``(j + 0.5, i + 0.5)``.
Poses are world-to-camera: ``x_cam = R @ x_world + t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDepth, InvalidPose

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def centered(cls, width, height, focal):
        """Square-pixel camera with the principal point at the image center."""
        return cls(float(focal), float(focal), width / 2.0, height / 2.0, int(width), int(height))

    def matrix(self):
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class FrustumSpec:
    """Depth range of the viewing frustum and its number of depth slices.

    ``object_depth`` is the camera-space depth of the modeled cube's center;
    it defaults to the middle of ``[z_near, z_far]``.
    """

    z_near: float
    z_far: float
    d_s: int
    object_depth: float | None = None

    def __post_init__(self):
        if not (0 < self.z_near < self.z_far):
            raise ValueError("need 0 < z_near < z_far")
        if self.d_s < 2:
            raise ValueError("need at least two depth slices")

    @property
    def center_depth(self):
        if self.object_depth is None:
            return 0.5 * (self.z_near + self.z_far)
        return float(self.object_depth)

    def slice_depths(self, n=None, dtype=np.float64):
        """Depths of the slice centers, uniform in metric depth."""
        n = self.d_s if n is None else int(n)
        k = np.arange(n, dtype=np.float64)
        z = self.z_near + (k + 0.5) / n * (self.z_far - self.z_near)
        return z.astype(dtype)

    def default_voxel_size(self, depth_voxels):
        """Voxel size that makes a cube of ``depth_voxels`` span the depth range."""
        return (self.z_far - self.z_near) / float(depth_voxels)


class Pose:
    """Rigid world-to-camera transform ``x_cam = R x + t``."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation=None, translation=None, check=True):
        R = np.eye(3) if rotation is None else np.array(rotation, dtype=np.float64)
        t = np.zeros(3) if translation is None else np.array(translation, dtype=np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise InvalidPose("rotation must be 3x3 and translation a 3-vector")
        if check:
            if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
                raise InvalidPose("pose has non-finite entries")
            if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL:
                raise InvalidPose("rotation is not orthonormal")
            if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
                raise InvalidPose("rotation has determinant != +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def __setattr__(self, name, value):
        raise AttributeError("Pose is immutable")

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, m, check=True):
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidPose(f"expected a 4x4 matrix, got shape {m.shape}")
        if check and np.max(np.abs(m[3] - [0.0, 0.0, 0.0, 1.0])) > _ORTHO_TOL:
            raise InvalidPose("bottom row of a pose matrix must be 0 0 0 1")
        return cls(m[:3, :3], m[:3, 3], check=check)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points):
        """Transform ``(..., 3)`` points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def inverse(self):
        return invert_pose(self)

    def __matmul__(self, other):
        """``(a @ b)`` applies ``b`` first, then ``a``."""
        if not isinstance(other, Pose):
            return NotImplemented
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            check=False,
        )

    def allclose(self, other, atol=1e-6):
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def invert_pose(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -Rt @ p.translation, check=False)


def relative_pose(source: Pose, target: Pose) -> Pose:
    """Transform taking source-camera coordinates to target-camera coordinates."""
    return target @ invert_pose(source)


def project(k: Intrinsics, point_cam):
    """Project camera-space point(s) to continuous pixel coordinates ``(u, v)``."""
    p = np.asarray(point_cam, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 1e-9):
        raise DegenerateDepth("point at or behind the camera plane")
    u = k.fx * p[..., 0] / z + k.cx
    v = k.fy * p[..., 1] / z + k.cy
    return np.stack([u, v], axis=-1)


def unproject(k: Intrinsics, pixel, depth):
    """Camera-space point at metric ``depth`` along the ray through ``pixel``."""
    pixel = np.asarray(pixel, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    x = (pixel[..., 0] - k.cx) / k.fx * depth
    y = (pixel[..., 1] - k.cy) / k.fy * depth
    return np.stack(np.broadcast_arrays(x, y, depth), axis=-1)


def pixel_centers(k: Intrinsics, h=None, w=None):
    """Continuous pixel coordinates of an ``h x w`` sampling of the image plane.

    Returns ``(u, v)`` arrays of shape ``(w,)`` and ``(h,)``.  With the default
    ``h, w`` equal to the image size these are the half-pixel centers.
    """
    h = k.height if h is None else int(h)
    w = k.width if w is None else int(w)
    u = (np.arange(w) + 0.5) * (k.width / w)
    v = (np.arange(h) + 0.5) * (k.height / h)
    return u, v


def ray_directions(k: Intrinsics, h=None, w=None):
    """Unnormalized ray directions with unit z, shape ``(h, w, 3)``."""
    u, v = pixel_centers(k, h, w)
    dirs = np.empty((len(v), len(u), 3))
    dirs[..., 0] = ((u - k.cx) / k.fx)[None, :]
    dirs[..., 1] = ((v - k.cy) / k.fy)[:, None]
    dirs[..., 2] = 1.0
    return dirs


def frustum_grid(k: Intrinsics, f: FrustumSpec, dims=None):
    """Camera-space points of every frustum voxel, shape ``(d, h, w, 3)``.

    Voxel ``(kd, i, j)`` sits on the ray through pixel center ``(j + 0.5,
    i + 0.5)`` (rescaled when ``(h, w)`` differs from the image size) at depth
    ``z_near + (kd + 0.5) / d * (z_far - z_near)``.
    """
    if dims is None:
        dims = (f.d_s, k.height, k.width)
    d, h, w = (int(x) for x in dims)
    if min(d, h, w) < 1:
        raise ValueError("grid dims must be positive")
    dirs = ray_directions(k, h, w)
    z = f.slice_depths(d)
    return dirs[None, :, :, :] * z[:, None, None, None]


def cube_center_index(dims):
    return (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0


def camera_to_index_affine(dims, voxel_size, center):
    """4x4 affine taking camera-frame xyz to fractional ``(kd, ki, kj)`` indices.

    The cube of ``dims`` voxels of edge ``voxel_size`` is axis-aligned with the
    camera and centered at camera-space point ``center``.
    """
    c_idx = cube_center_index(dims)
    s = 1.0 / float(voxel_size)
    center = np.asarray(center, dtype=np.float64)
    a = np.zeros((4, 4))
    # xyz -> (d, h, w) == (z, y, x)
    a[0, 2] = s
    a[1, 1] = s
    a[2, 0] = s
    a[:3, 3] = c_idx - s * center[[2, 1, 0]]
    a[3, 3] = 1.0
    return a


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, -1.0, 0.0)) -> Pose:
    """World-to-camera pose of a camera at ``eye`` looking at ``target``.

    ``up`` is the world direction that should appear toward the top of the
    image (the camera's -y axis).
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise InvalidPose("eye and target coincide")
    z = fwd / norm
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(-up, z)
    if np.linalg.norm(x) < 1e-9:
        # looking along the up axis
        alt = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        x = np.cross(alt, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return Pose(R, -R @ eye)


def canonical_pose(f: FrustumSpec) -> Pose:
    """Camera that sees the world-axis-aligned cube centered at the origin.

    It looks along +z from ``(0, 0, -center_depth)``; volumes stored in the
    world frame are "aligned" with this camera.
    """
    return Pose(np.eye(3), [0.0, 0.0, f.center_depth])


def sphere_poses(n, radius, seed=0, target=(0.0, 0.0, 0.0)):
    """``n`` cameras uniformly distributed on a sphere, looking at ``target``.

    Directions come from Marsaglia's rejection method with a seeded generator.
    """
    rng = np.random.default_rng(seed)
    poses = []
    while len(poses) < n:
        x1, x2 = rng.uniform(-1.0, 1.0, size=2)
        s = x1 * x1 + x2 * x2
        if s >= 1.0:
            continue
        r = np.sqrt(1.0 - s)
        direction = np.array([2.0 * x1 * r, 2.0 * x2 * r, 1.0 - 2.0 * s])
        eye = np.asarray(target, dtype=np.float64) + radius * direction
        poses.append(look_at(eye, target))
    return poses


def turntable_poses(n, radius, elevation_deg=0.0):
    """``n`` cameras at equally spaced azimuths around the world y axis.

    Azimuth 0 coincides with :func:`canonical_pose` for ``radius ==
    center_depth`` and zero elevation.
    """
    poses = []
    el = np.deg2rad(elevation_deg)
    for i in range(n):
        az = 2.0 * np.pi * i / n
        # camera sits at -z for az=0 and swings toward +x
        eye = radius * np.array(
            [np.sin(az) * np.cos(el), -np.sin(el), -np.cos(az) * np.cos(el)]
        )
        poses.append(look_at(eye))
    return poses


def rotation_about(axis, angle):
    """Rotation matrix for ``angle`` radians about ``axis`` (Rodrigues)."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def random_pose(rng, max_angle=np.pi, max_translation=0.0):
    """Random rigid pose; rotation angle uniform in ``[0, max_angle]``."""
    axis = rng.normal(size=3)
    angle = rng.uniform(0.0, max_angle)
    t = rng.uniform(-max_translation, max_translation, size=3) if max_translation else np.zeros(3)
    R = rotation_about(axis, angle)
    # re-orthonormalize to keep the pose invariant tight
    u, _, vt = np.linalg.svd(R)
    return Pose(u @ vt, t)
