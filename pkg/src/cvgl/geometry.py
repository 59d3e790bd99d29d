"""Pinhole camera model, rigid transforms and Z-buffer projection.

Camera frame: +X right, +Y down, +Z forward. World frame: +Z up.
Poses are world-from-camera. Rasters are indexed ``[v, u]`` (row, column).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Depth value marking an invalid pixel.
INVALID_DEPTH = 0.0
#: Label value marking a margin (no data) pixel.
MARGIN_LABEL = 0
#: Fraction of margin at or above which a synthesized view is rejected.
MAX_MARGIN_FRACTION = 0.8

#: Maps points from this package's camera frame into an OpenGL-style camera
#: frame (+X right, +Y up, -Z forward), as used by Habitat.
OPENGL_FROM_CAMERA = np.diag([1.0, -1.0, -1.0])


class GeometryError(ValueError):
    """Raised on malformed geometric input."""


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int = 256
    height: int = 256
    fx: float = 128.0
    fy: float = 128.0
    cx: float = 128.0
    cy: float = 128.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("raster dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")

    @classmethod
    def from_hfov(cls, width: int, height: int, hfov: float = math.pi / 2) -> "CameraIntrinsics":
        f = (width / 2) / math.tan(hfov / 2)
        return cls(width, height, f, f, width / 2, height / 2)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def hfov(self) -> float:
        return 2 * math.atan((self.width / 2) / self.fx)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])


@dataclass(frozen=True, eq=False)
class Pose:
    """World-from-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise GeometryError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_planar(cls, x: float, y: float, heading: float, height: float = 1.2) -> "Pose":
        """Level camera at ``(x, y, height)`` looking along ``heading`` (radians from world +X)."""
        c, s = math.cos(heading), math.sin(heading)
        right = [s, -c, 0.0]
        down = [0.0, 0.0, -1.0]
        forward = [c, s, 0.0]
        return cls(np.column_stack([right, down, forward]), np.array([x, y, height]))

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def planar(self) -> tuple[float, float, float]:
        """Bird's-eye ``(x, y, heading)`` of the camera."""
        fwd = self.rotation[:, 2]
        return float(self.translation[0]), float(self.translation[1]), math.atan2(fwd[1], fwd[0])

    def matrix(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)


@dataclass
class PointCloud:
    points: np.ndarray  # (n, 3) meters
    pixels: np.ndarray  # (n, 2) source (u, v)
    labels: np.ndarray  # (n,)
    source_shape: tuple[int, int] = field(default=(0, 0))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def source_index(self) -> np.ndarray:
        """Flat row-major index of each point's source pixel."""
        return self.pixels[:, 1] * self.source_shape[1] + self.pixels[:, 0]


@dataclass(frozen=True)
class VisibilityCone:
    hfov: float = math.pi / 2
    max_range: float = 10.0

    def __post_init__(self):
        if not 0 < self.hfov < math.pi:
            raise GeometryError("cone hfov must lie in (0, pi)")
        if self.max_range <= 0:
            raise GeometryError("cone max_range must be positive")


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def backproject(depth: np.ndarray, intr: CameraIntrinsics, labels: np.ndarray) -> PointCloud:
    depth = np.asarray(depth, dtype=np.float64)
    labels = np.asarray(labels)
    if depth.shape != intr.shape or labels.shape != intr.shape:
        raise GeometryError(
            f"raster shapes {depth.shape}/{labels.shape} do not match intrinsics {intr.shape}"
        )
    valid = np.isfinite(depth) & (depth > 0)
    v, u = np.nonzero(valid)
    z = depth[v, u]
    x = (u - intr.cx) * z / intr.fx
    y = (v - intr.cy) * z / intr.fy
    return PointCloud(
        points=np.column_stack([x, y, z]),
        pixels=np.column_stack([u, v]).astype(np.int64),
        labels=labels[v, u],
        source_shape=intr.shape,
    )


def transform_points(cloud: PointCloud, pose: Pose) -> PointCloud:
    pts = cloud.points @ pose.rotation.T + pose.translation
    return PointCloud(pts, cloud.pixels, cloud.labels, cloud.source_shape)


def relative_pose(source: Pose, target: Pose) -> Pose:
    """Transform taking source-camera coordinates to target-camera coordinates."""
    return target.inverse().compose(source)


def project_zbuffer(cloud: PointCloud, intr: CameraIntrinsics):
    """Splat ``cloud`` (target camera frame) into rasters, nearest depth winning.

    Returns ``(labels, depth, pixel_map)``; ``pixel_map`` holds the flat source
    index of the winning point, or -1 where nothing landed.
    """
    H, W = intr.shape
    labels = np.full((H, W), MARGIN_LABEL, dtype=np.uint16)
    depth = np.full((H, W), INVALID_DEPTH, dtype=np.float64)
    pixmap = np.full((H, W), -1, dtype=np.int64)
    if len(cloud) == 0:
        return labels, depth, pixmap

    x, y, z = cloud.points.T
    front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.rint(intr.fx * x / z + intr.cx)
        v = np.rint(intr.fy * y / z + intr.cy)
    keep = front & (u >= 0) & (u < W) & (v >= 0) & (v < H)
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return labels, depth, pixmap
    target = v[idx].astype(np.int64) * W + u[idx].astype(np.int64)
    # lexsort: last key is primary; ties on depth go to the earlier point
    order = np.lexsort((idx, z[idx], target))
    target = target[order]
    first = np.ones(target.size, dtype=bool)
    first[1:] = target[1:] != target[:-1]
    win = idx[order][first]
    tgt = target[first]
    labels.flat[tgt] = cloud.labels[win]
    depth.flat[tgt] = z[win]
    pixmap.flat[tgt] = cloud.source_index[win]
    return labels, depth, pixmap


def in_visibility_cone(point, camera, cone: VisibilityCone = VisibilityCone()) -> bool:
    """Bird's-eye test of ``point`` against camera ``(x, y, heading)``."""
    dx = point[0] - camera[0]
    dy = point[1] - camera[1]
    dist = math.hypot(dx, dy)
    if dist > cone.max_range:
        return False
    if dist == 0.0:
        return True
    off = wrap_angle(math.atan2(dy, dx) - camera[2])
    return abs(off) <= cone.hfov / 2


def margin_fraction(labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return 1.0
    return float(np.count_nonzero(labels == MARGIN_LABEL)) / labels.size


def is_valid_view(labels: np.ndarray, threshold: float = MAX_MARGIN_FRACTION) -> bool:
    return margin_fraction(labels) < threshold
