import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from cvgl.geometry import (
    CameraIntrinsics,
    GeometryError,
    MARGIN_LABEL,
    PointCloud,
    Pose,
    VisibilityCone,
    backproject,
    in_visibility_cone,
    is_valid_view,
    margin_fraction,
    project_zbuffer,
    relative_pose,
    transform_points,
    wrap_angle,
)

INTR = CameraIntrinsics()


def cloud_of(points, labels=None):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    labels = np.arange(1, n + 1) if labels is None else np.asarray(labels)
    pixels = np.column_stack([np.arange(n), np.zeros(n, dtype=int)])
    return PointCloud(pts, pixels, labels, INTR.shape)


def test_default_intrinsics_are_90_degree_hfov():
    assert INTR.width == INTR.height == 256
    assert INTR.fx == INTR.fy == 128 and INTR.cx == INTR.cy == 128
    assert INTR.hfov == pytest.approx(math.pi / 2)
    derived = CameraIntrinsics.from_hfov(256, 256)
    assert derived.fx == pytest.approx(128.0) and derived.cx == 128.0


@pytest.mark.parametrize("kw", [dict(width=0), dict(fx=0.0), dict(fy=-1.0)])
def test_intrinsics_validation(kw):
    with pytest.raises(GeometryError):
        CameraIntrinsics(**kw)


def test_pose_rejects_non_rotation():
    with pytest.raises(GeometryError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(GeometryError):
        Pose(np.eye(3) * 1.01, np.zeros(3))


def test_backproject_optical_center_and_corner():
    depth = np.zeros(INTR.shape)
    depth[128, 128] = 2.0
    depth[0, 0] = 1.0
    labels = np.ones(INTR.shape, dtype=np.uint16)
    cloud = backproject(depth, INTR, labels)
    got = {tuple(px): tuple(p) for px, p in zip(cloud.pixels, cloud.points)}
    assert got[(128, 128)] == (0.0, 0.0, 2.0)
    assert got[(0, 0)] == (-1.0, -1.0, 1.0)


def test_backproject_all_invalid_is_empty():
    cloud = backproject(np.zeros(INTR.shape), INTR, np.zeros(INTR.shape, dtype=np.uint16))
    assert len(cloud) == 0


def test_backproject_dimension_mismatch():
    with pytest.raises(GeometryError):
        backproject(np.ones((10, 10)), INTR, np.ones((10, 10)))
    with pytest.raises(GeometryError):
        backproject(np.ones(INTR.shape), INTR, np.ones((10, 10)))


def test_transform_identity_and_translation():
    c = cloud_of([[0, 0, 2], [1, 2, 3]])
    same = transform_points(c, Pose.identity())
    np.testing.assert_array_equal(same.points, c.points)
    np.testing.assert_array_equal(same.labels, c.labels)
    moved = transform_points(cloud_of([[0, 0, 2]]), Pose(np.eye(3), [1, 0, 0]))
    np.testing.assert_array_equal(moved.points, [[1, 0, 2]])


def test_transform_yaw_about_y():
    # 90 degrees about +Y: [[c,0,s],[0,1,0],[-s,0,c]]
    R = np.array([[0.0, 0, 1], [0, 1, 0], [-1, 0, 0]])
    out = transform_points(cloud_of([[0, 0, 1]]), Pose(R, np.zeros(3)))
    np.testing.assert_allclose(out.points, [[1, 0, 0]], atol=1e-12)


def test_zbuffer_single_point():
    labels, depth, pixmap = project_zbuffer(cloud_of([[0, 0, 2]], [7]), INTR)
    assert labels[128, 128] == 7 and depth[128, 128] == 2.0
    assert pixmap[128, 128] == 0
    assert np.count_nonzero(labels != MARGIN_LABEL) == 1
    assert margin_fraction(labels) == pytest.approx(1 - 1 / 256**2)


def test_zbuffer_nearest_wins():
    labels, depth, _ = project_zbuffer(cloud_of([[0, 0, 3], [0, 0, 1]], [5, 9]), INTR)
    assert labels[128, 128] == 9 and depth[128, 128] == 1.0


def test_zbuffer_behind_camera_dropped():
    labels, _, _ = project_zbuffer(cloud_of([[0, 0, -1]]), INTR)
    assert margin_fraction(labels) == 1.0


def test_empty_cloud_render_is_all_margin():
    labels, _, _ = project_zbuffer(cloud_of(np.zeros((0, 3))), INTR)
    assert margin_fraction(labels) == 1.0


@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 5)), min_size=1, max_size=60))
def test_zbuffer_depth_is_min_z_per_pixel(pts):
    pts = np.array(pts)
    cloud = cloud_of(pts)
    _, depth, _ = project_zbuffer(cloud, INTR)
    u = np.rint(INTR.fx * pts[:, 0] / pts[:, 2] + INTR.cx).astype(int)
    v = np.rint(INTR.fy * pts[:, 1] / pts[:, 2] + INTR.cy).astype(int)
    inside = (u >= 0) & (u < 256) & (v >= 0) & (v < 256)
    expected = {}
    for ui, vi, z in zip(u[inside], v[inside], pts[inside, 2]):
        expected[(vi, ui)] = min(expected.get((vi, ui), np.inf), z)
    rendered = {tuple(ix) for ix in np.argwhere(depth > 0)}
    assert rendered == set(expected)
    for key, z in expected.items():
        assert depth[key] == z


def test_round_trip_identity():
    rng = np.random.default_rng(0)
    depth = rng.uniform(0.5, 8.0, INTR.shape)
    depth[rng.random(INTR.shape) < 0.2] = 0.0
    labels = rng.integers(1, 12, INTR.shape).astype(np.uint16)
    cloud = backproject(depth, INTR, labels)
    out_labels, out_depth, pixmap = project_zbuffer(cloud, INTR)
    valid = depth > 0
    np.testing.assert_array_equal(out_labels[valid], labels[valid])
    assert np.all(np.abs(out_depth[valid] - depth[valid]) < 1e-6)
    assert np.all(out_labels[~valid] == MARGIN_LABEL)
    flat = np.arange(depth.size).reshape(depth.shape)
    np.testing.assert_array_equal(pixmap[valid], flat[valid])


def test_relative_pose_maps_between_cameras():
    a = Pose.from_planar(1, 2, 0.3)
    b = Pose.from_planar(-1, 0.5, 2.0)
    p = np.array([[0.2, -0.1, 3.0]])
    world = transform_points(cloud_of(p), a).points
    via_b = transform_points(cloud_of(p), relative_pose(a, b)).points
    np.testing.assert_allclose(transform_points(cloud_of(via_b), b).points, world, atol=1e-12)


def test_planar_pose_axes():
    pose = Pose.from_planar(0, 0, math.pi / 2)
    np.testing.assert_allclose(pose.rotation[:, 2], [0, 1, 0], atol=1e-15)  # forward
    np.testing.assert_allclose(pose.rotation[:, 1], [0, 0, -1])  # image down = world down
    assert pose.planar()[2] == pytest.approx(math.pi / 2)


@pytest.mark.parametrize(
    "point,expected",
    [((3.0, 0.0), True), ((math.cos(math.radians(50)), math.sin(math.radians(50))), False), ((-3.0, 0.0), False)],
)
def test_visibility_cone_examples(point, expected):
    assert in_visibility_cone(point, (0.0, 0.0, 0.0), VisibilityCone()) is expected


def test_visibility_cone_range():
    assert not in_visibility_cone((10.5, 0.0), (0, 0, 0))
    assert in_visibility_cone((9.9, 0.0), (0, 0, 0))


@settings(max_examples=200)
@given(
    st.floats(-5, 5), st.floats(-5, 5), st.floats(-math.pi, math.pi),
    st.floats(-5, 5), st.floats(-5, 5),
    st.floats(-math.pi, math.pi), st.floats(-10, 10), st.floats(-10, 10),
)
def test_visibility_cone_rigid_invariance(px, py, ch, cx, cy, rot, tx, ty):
    cone = VisibilityCone()
    dx, dy = px - cx, py - cy
    dist = math.hypot(dx, dy)
    off = abs(wrap_angle(math.atan2(dy, dx) - ch))
    # keep clear of the boundaries where rounding could flip the answer
    assume(abs(dist - cone.max_range) > 1e-6 and abs(off - cone.hfov / 2) > 1e-6 and dist > 1e-6)
    c, s = math.cos(rot), math.sin(rot)

    def move(x, y):
        return (c * x - s * y + tx, s * x + c * y + ty)

    before = in_visibility_cone((px, py), (cx, cy, ch), cone)
    after = in_visibility_cone(move(px, py), (*move(cx, cy), ch + rot), cone)
    assert before == after


def test_cone_validation():
    with pytest.raises(GeometryError):
        VisibilityCone(hfov=math.pi)
    with pytest.raises(GeometryError):
        VisibilityCone(max_range=0)


def test_margin_fraction_threshold():
    labels = np.zeros((10, 10), dtype=np.uint16)
    assert margin_fraction(labels) == 1.0 and not is_valid_view(labels)
    labels[:5] = 1
    assert margin_fraction(labels) == 0.5 and is_valid_view(labels)
    labels[:] = 0
    labels[:2] = 1
    assert margin_fraction(labels) == 0.8
    assert not is_valid_view(labels)


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
