import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volsynth.camera import (
    FrustumSpec,
    Intrinsics,
    Pose,
    frustum_grid,
    invert_pose,
    look_at,
    project,
    random_pose,
    relative_pose,
    sphere_poses,
    turntable_poses,
    unproject,
)
from volsynth.errors import DegenerateDepth, InvalidPose


def _rand_pose(seed):
    rng = np.random.default_rng(seed)
    return random_pose(rng, max_translation=3.0)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(0.0, 1.0, 5, 5, 10, 10)
    with pytest.raises(ValueError):
        Intrinsics(1.0, 1.0, 10, 5, 10, 10)
    k = Intrinsics.centered(64, 32, 50.0)
    assert (k.cx, k.cy) == (32.0, 16.0)


def test_frustum_validation():
    with pytest.raises(ValueError):
        FrustumSpec(3.0, 2.0, 8)
    with pytest.raises(ValueError):
        FrustumSpec(1.0, 2.0, 1)
    assert FrustumSpec(2.0, 6.0, 4).center_depth == 4.0


def test_pose_rejects_non_orthonormal():
    with pytest.raises(InvalidPose):
        Pose(np.diag([1.0, 1.0, 1.1]))
    with pytest.raises(InvalidPose):
        Pose(np.diag([1.0, 1.0, -1.0]))


def test_pose_is_immutable():
    p = Pose.identity()
    with pytest.raises(AttributeError):
        p.translation = np.ones(3)
    with pytest.raises(ValueError):
        p.rotation[0, 0] = 2.0


def test_relative_pose_self_is_identity():
    p = _rand_pose(1)
    rel = relative_pose(p, p)
    assert rel.allclose(Pose.identity(), atol=1e-6)


def test_relative_pose_pure_rotation():
    R = look_at([1.0, 0.0, 0.0], [0.0, 0.0, 0.0]).rotation
    rel = relative_pose(Pose.identity(), Pose(R))
    np.testing.assert_allclose(rel.rotation, R, atol=1e-12)
    np.testing.assert_allclose(rel.translation, 0.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_relative_pose_composes_to_target(seed):
    ps, pt = _rand_pose(seed), _rand_pose(seed + 100)
    rel = relative_pose(ps, pt)
    # oracle: plain 4x4 matrix products
    expected = pt.matrix()
    got = rel.matrix() @ ps.matrix()
    np.testing.assert_allclose(got, expected, atol=1e-6)
    pts = np.random.default_rng(seed).normal(size=(10, 3))
    np.testing.assert_allclose(rel.apply(ps.apply(pts)), pt.apply(pts), atol=1e-6)


def test_invert_pose_examples():
    assert invert_pose(Pose.identity()).allclose(Pose.identity(), atol=0)
    t = np.array([1.0, -2.0, 3.5])
    inv = invert_pose(Pose(np.eye(3), t))
    np.testing.assert_array_equal(inv.translation, -t)


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_invert_pose_involution_and_inverse(seed):
    p = _rand_pose(seed)
    assert invert_pose(invert_pose(p)).allclose(p, atol=1e-6)
    assert (invert_pose(p) @ p).allclose(Pose.identity(), atol=1e-6)


def test_project_examples():
    k = Intrinsics(100.0, 100.0, 64.0, 64.0, 128, 128)
    np.testing.assert_allclose(project(k, [0.0, 0.0, 3.7]), [64.0, 64.0])
    np.testing.assert_allclose(project(k, [1.0, 0.0, 2.0]), [114.0, 64.0])
    with pytest.raises(DegenerateDepth):
        project(k, [0.0, 0.0, 0.0])
    with pytest.raises(DegenerateDepth):
        project(k, [0.0, 0.0, -1.0])


@given(
    u=st.floats(0.0, 64.0),
    v=st.floats(0.0, 48.0),
    z=st.floats(2.0, 6.0),
)
@settings(max_examples=100, deadline=None)
def test_project_unproject_roundtrip(u, v, z):
    k = Intrinsics(55.0, 60.0, 31.0, 23.5, 64, 48)
    np.testing.assert_allclose(project(k, unproject(k, [u, v], z)), [u, v], atol=1e-6)


def test_frustum_grid_center_and_first_slice():
    k = Intrinsics.centered(5, 5, 4.0)
    f = FrustumSpec(2.0, 6.0, 5)
    g = frustum_grid(k, f, (5, 5, 5))
    np.testing.assert_allclose(g[2, 2, 2], [0.0, 0.0, 4.0], atol=1e-12)
    np.testing.assert_allclose(g[0, :, :, 2], 2.0 + 0.5 * 4.0 / 5)


def test_frustum_grid_corner_matches_projection_oracle():
    k = Intrinsics(10.0, 20.0, 3.0, 2.0, 8, 4)
    f = FrustumSpec(1.0, 3.0, 2)
    g = frustum_grid(k, f, (2, 2, 2))
    # voxel (1, 1, 1): pixel center scaled to the 2x2 grid is (6, 3), depth 2.5
    p = g[1, 1, 1]
    assert p[2] == pytest.approx(2.5)
    np.testing.assert_allclose(project(k, p), [(1 + 0.5) * 8 / 2, (1 + 0.5) * 4 / 2], atol=1e-12)
    # x = (u - cx) / fx * z by hand
    assert p[0] == pytest.approx((6.0 - 3.0) / 10.0 * 2.5)
    assert p[1] == pytest.approx((3.0 - 2.0) / 20.0 * 2.5)


def test_frustum_grid_depth_monotone_and_pixel_plane_depth_independent():
    k = Intrinsics(30.0, 30.0, 10.0, 8.0, 20, 16)
    f = FrustumSpec(1.5, 4.0, 7)
    g = frustum_grid(k, f)
    assert np.all(np.diff(g[:, 0, 0, 2]) > 0)
    uv = project(k, g)
    np.testing.assert_allclose(uv, np.broadcast_to(uv[:1], uv.shape), atol=1e-9)


def test_look_at_canonical_and_orientation():
    p = look_at([0.0, 0.0, -4.0])
    np.testing.assert_allclose(p.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(p.translation, [0.0, 0.0, 4.0], atol=1e-12)
    # looking straight down the up axis still gives a valid pose
    q = look_at([0.0, -3.0, 0.0])
    np.testing.assert_allclose(q.apply([0.0, 0.0, 0.0]), [0.0, 0.0, 3.0], atol=1e-12)


def test_sphere_poses_seeded_and_roughly_uniform():
    a = sphere_poses(50, 4.0, seed=7)
    b = sphere_poses(50, 4.0, seed=7)
    assert all(x == y for x, y in zip(a, b))
    centers = np.array([invert_pose(p).translation for p in a])
    np.testing.assert_allclose(np.linalg.norm(centers, axis=1), 4.0)
    mean_dir = np.linalg.norm((centers / 4.0).mean(axis=0))
    assert mean_dir <= 0.2
    for p in a:
        np.testing.assert_allclose(p.apply([0.0, 0.0, 0.0]), [0.0, 0.0, 4.0], atol=1e-9)


def test_turntable_first_pose_is_canonical():
    poses = turntable_poses(4, 4.0)
    np.testing.assert_allclose(poses[0].rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(poses[0].translation, [0.0, 0.0, 4.0], atol=1e-12)
