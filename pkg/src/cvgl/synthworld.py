"""Procedural box-room worlds and an exact ray-cast renderer.

The renderer produces ground-truth depth, semantic labels and a scalar
intensity channel for a pinhole camera, standing in for a simulator plus a
monocular depth network.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io as cvio
from .geometry import MARGIN_LABEL, CameraIntrinsics, Pose

FLOOR, CEILING, WALL = 1, 2, 3
LABEL_NAMES = {
    MARGIN_LABEL: "margin",
    FLOOR: "floor",
    CEILING: "ceiling",
    WALL: "wall",
    **{4 + i: f"box-{c}" for i, c in enumerate("ABCDEFGH")},
}
OBJECT_LABELS = tuple(range(4, 12))

# direction used for face shading, world frame
_LIGHT = np.array([0.3, 0.5, 0.81]) / np.linalg.norm([0.3, 0.5, 0.81])


class WorldGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Texture:
    """Sinusoidal stripe modulation of albedo: ``1 + amplitude * sin(k . p + phase)``."""

    wavevector: tuple[float, float, float] = (0.0, 0.0, 0.0)
    phase: float = 0.0
    amplitude: float = 0.0


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    label: int
    albedo: float
    texture: Texture = field(default_factory=Texture)


@dataclass(frozen=True)
class WorldSpec:
    room: tuple[float, float, float] = (10.0, 10.0, 2.8)
    min_objects: int = 24
    max_objects: int | None = None
    footprint: tuple[float, float] = (0.4, 1.6)
    height: tuple[float, float] = (0.3, 2.2)
    clearance: float = 0.4
    texture_amplitude: float = 0.35
    max_attempts: int = 2000

    def __post_init__(self):
        if min(self.room) <= 0 or min(self.footprint) <= 0 or min(self.height) <= 0:
            raise WorldGenerationError("world spec ranges must be positive")
        if self.min_objects < 0:
            raise WorldGenerationError("min_objects must be non-negative")


@dataclass(frozen=True)
class World:
    seed: int
    room: tuple[float, float, float]
    objects: tuple[Box, ...]
    # floor, ceiling, then walls at x=0, x=X, y=0, y=Y
    shell: tuple[Box, ...]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "World":
        d = json.loads(text)

        def box(b):
            t = b["texture"]
            return Box(tuple(b["lo"]), tuple(b["hi"]), b["label"], b["albedo"],
                       Texture(tuple(t["wavevector"]), t["phase"], t["amplitude"]))

        return cls(d["seed"], tuple(d["room"]), tuple(box(b) for b in d["objects"]),
                   tuple(box(b) for b in d["shell"]))

    def footprint_contains(self, x: float, y: float, pad: float = 0.0) -> bool:
        return any(
            b.lo[0] - pad <= x <= b.hi[0] + pad and b.lo[1] - pad <= y <= b.hi[1] + pad
            for b in self.objects
        )


def _texture(rng: np.random.Generator, amplitude: float) -> Texture:
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    k = 2 * math.pi / rng.uniform(0.15, 0.6)
    return Texture(tuple(float(c) for c in k * direction), float(rng.uniform(0, 2 * math.pi)), amplitude)


def generate_world(seed: int, spec: WorldSpec = WorldSpec()) -> World:
    rng = np.random.default_rng(seed)
    X, Y, Z = spec.room
    amp = spec.texture_amplitude
    shell = [Box((0, 0, 0), (X, Y, 0), FLOOR, float(rng.uniform(0.3, 0.5)), _texture(rng, amp)),
             Box((0, 0, Z), (X, Y, Z), CEILING, float(rng.uniform(0.75, 0.9)), _texture(rng, amp))]
    for lo, hi in [((0, 0, 0), (0, Y, Z)), ((X, 0, 0), (X, Y, Z)),
                   ((0, 0, 0), (X, 0, Z)), ((0, Y, 0), (X, Y, Z))]:
        shell.append(Box(lo, hi, WALL, float(rng.uniform(0.45, 0.85)), _texture(rng, amp)))

    hi_count = spec.min_objects if spec.max_objects is None else spec.max_objects
    if hi_count < spec.min_objects:
        raise WorldGenerationError("max_objects < min_objects")
    n = int(rng.integers(spec.min_objects, hi_count + 1))
    labels = list(rng.permutation(OBJECT_LABELS))
    objects: list[Box] = []
    for i in range(n):
        for _ in range(spec.max_attempts):
            w, d = rng.uniform(*spec.footprint, size=2)
            h = rng.uniform(*spec.height)
            room_gap = spec.clearance
            if w + 2 * room_gap >= X or d + 2 * room_gap >= Y or h >= Z:
                raise WorldGenerationError("object extents do not fit in the room")
            x0 = rng.uniform(room_gap, X - room_gap - w)
            y0 = rng.uniform(room_gap, Y - room_gap - d)
            clash = any(
                x0 < b.hi[0] + spec.clearance and b.lo[0] < x0 + w + spec.clearance
                and y0 < b.hi[1] + spec.clearance and b.lo[1] < y0 + d + spec.clearance
                for b in objects
            )
            if not clash:
                break
        else:
            raise WorldGenerationError(f"could not place object {i} after {spec.max_attempts} attempts")
        # first len(OBJECT_LABELS) objects take distinct labels
        label = int(labels[i]) if i < len(labels) else int(rng.choice(OBJECT_LABELS))
        objects.append(Box((float(x0), float(y0), 0.0), (float(x0 + w), float(y0 + d), float(h)),
                           label, float(rng.uniform(0.15, 0.95)), _texture(rng, amp)))
    return World(seed, (float(X), float(Y), float(Z)), tuple(objects), tuple(shell))


@dataclass(eq=False)
class Frame:
    depth: np.ndarray
    labels: np.ndarray
    intensity: np.ndarray
    pose: Pose
    intrinsics: CameraIntrinsics
    frame_id: int = 0

    def __post_init__(self):
        shape = self.intrinsics.shape
        for name in ("depth", "labels", "intensity"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} raster shape does not match intrinsics {shape}")


def camera_rays(pose: Pose, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """World-frame ray directions scaled so the camera-z component is 1.

    With this scaling the ray parameter at a hit equals its depth.
    """
    v, u = np.mgrid[0 : intr.height, 0 : intr.width]
    d_cam = np.stack([(u.ravel() - intr.cx) / intr.fx, (v.ravel() - intr.cy) / intr.fy,
                      np.ones(u.size)], axis=1)
    return pose.translation, d_cam @ pose.rotation.T


def _shade(normals: np.ndarray) -> np.ndarray:
    return 0.55 + 0.45 * np.abs(normals @ _LIGHT)


def _texture_factor(points: np.ndarray, tex: Texture) -> np.ndarray:
    if tex.amplitude == 0:
        return np.ones(len(points))
    return 1.0 + tex.amplitude * np.sin(points @ np.asarray(tex.wavevector) + tex.phase)


def _box_entry(origin, inv_cols, lo, hi):
    """Entry parameter and entry axis of rays against one box (inf on miss)."""
    near, far = [], []
    with np.errstate(invalid="ignore"):
        for i in range(3):
            t1 = (lo[i] - origin[i]) * inv_cols[i]
            t2 = (hi[i] - origin[i]) * inv_cols[i]
            near.append(np.minimum(t1, t2))
            far.append(np.maximum(t1, t2))
    t_in = np.maximum(np.maximum(near[0], near[1]), near[2])
    t_out = np.minimum(np.minimum(far[0], far[1]), far[2])
    ax = np.where(near[2] == t_in, 2, np.where(near[1] == t_in, 1, 0))
    # nan (ray grazing a face plane) compares false and counts as a miss
    hit = (t_in <= t_out) & (t_in > 0)
    return np.where(hit, t_in, np.inf), ax


def _room_exit(origin, inv, size):
    with np.errstate(invalid="ignore"):
        tfar = np.maximum(-origin * inv, (size - origin) * inv)
    ax = np.argmin(tfar, axis=1)
    return tfar[np.arange(len(tfar)), ax], ax


def render(world: World, pose: Pose, intr: CameraIntrinsics = CameraIntrinsics()) -> Frame:
    origin, dirs = camera_rays(pose, intr)
    n = len(dirs)
    with np.errstate(divide="ignore"):
        inv = 1.0 / dirs
    rows = np.arange(n)
    best_t = np.full(n, np.inf)
    surf = np.full(n, -1, dtype=np.int64)  # index into objects + shell
    axis = np.zeros(n, dtype=np.int64)

    size = np.asarray(world.room)
    if np.all(origin > 0) and np.all(origin < size):
        t_exit, ax = _room_exit(origin, inv, size)
        pos = dirs[rows, ax] > 0
        # shell order: floor, ceiling, x=0, x=X, y=0, y=Y
        shell_idx = np.where(ax == 2, np.where(pos, 1, 0),
                             np.where(ax == 0, np.where(pos, 3, 2), np.where(pos, 5, 4)))
        ok = np.isfinite(t_exit) & (t_exit > 0)
        best_t[ok] = t_exit[ok]
        surf[ok] = len(world.objects) + shell_idx[ok]
        axis[ok] = ax[ok]

    inv_cols = [np.ascontiguousarray(inv[:, i]) for i in range(3)]
    for k, b in enumerate(world.objects):
        t_in, ax = _box_entry(origin, inv_cols, b.lo, b.hi)
        closer = t_in < best_t
        best_t[closer] = t_in[closer]
        surf[closer] = k
        axis[closer] = ax[closer]

    valid = surf >= 0
    depth = np.where(valid, best_t, 0.0)
    pts = origin + dirs * depth[:, None]
    normals = np.zeros((n, 3))
    normals[rows, axis] = 1.0
    shade = _shade(normals)
    labels = np.full(n, MARGIN_LABEL, dtype=np.uint16)
    value = np.zeros(n)
    surfaces = world.objects + world.shell
    for j in np.unique(surf[valid]):
        sel = surf == j
        b = surfaces[j]
        labels[sel] = b.label
        value[sel] = b.albedo * shade[sel] * _texture_factor(pts[sel], b.texture)
    intensity = np.where(valid, np.clip(np.rint(value * 255), 1, 255), 0).astype(np.uint8)

    shape = intr.shape
    return Frame(depth.reshape(shape), labels.reshape(shape), intensity.reshape(shape), pose, intr)


def sample_pose_sweep(world: World, count: int, seed: int, height: float = 1.2,
                      clearance: float = 0.3) -> list[Pose]:
    """Seeded level camera poses in free space, uniform position and heading."""
    rng = np.random.default_rng(seed)
    X, Y, _ = world.room
    poses = []
    while len(poses) < count:
        x = rng.uniform(clearance, X - clearance)
        y = rng.uniform(clearance, Y - clearance)
        heading = rng.uniform(-math.pi, math.pi)
        if world.footprint_contains(x, y, clearance):
            continue
        poses.append(Pose.from_planar(x, y, heading, height))
    return poses


def render_sweep(world: World, poses, intr: CameraIntrinsics = CameraIntrinsics(),
                 workers: int | None = None) -> list[Frame]:
    from .parallel import ordered_map

    frames = ordered_map(lambda p: render(world, p, intr), poses, workers)
    for i, f in enumerate(frames):
        f.frame_id = i
    return frames


MANIFEST = "manifest.json"


def save_frameset(directory, frames, world_seed: int) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for f in frames:
        stem = f"{f.frame_id:05d}"
        files = {"depth": f"{stem}_depth.cvr", "labels": f"{stem}_labels.cvr",
                 "intensity": f"{stem}_intensity.cvr"}
        cvio.write_raster(directory / files["depth"], f.depth, cvio.DEPTH_F32)
        cvio.write_raster(directory / files["labels"], f.labels, cvio.LABEL_U16)
        cvio.write_raster(directory / files["intensity"], f.intensity, cvio.INTENSITY_U8)
        entries.append({"id": f.frame_id, **files, "pose": cvio.format_pose(f.pose)})
    intr = frames[0].intrinsics if frames else CameraIntrinsics()
    manifest = {"world_seed": world_seed, "intrinsics": asdict(intr), "frames": entries}
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_frameset(directory) -> tuple[list[Frame], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    intr = CameraIntrinsics(**manifest["intrinsics"])
    frames = []
    for e in manifest["frames"]:
        depth, _ = cvio.read_raster(directory / e["depth"])
        labels, _ = cvio.read_raster(directory / e["labels"])
        intensity, _ = cvio.read_raster(directory / e["intensity"])
        frames.append(Frame(depth.astype(np.float64), labels, intensity,
                            cvio.parse_pose(e["pose"]), intr, e["id"]))
    return frames, manifest
