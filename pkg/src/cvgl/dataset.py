"""Place classes, class assignment by visibility cone, and train/test splits."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .descriptors import extract_features, nbnn_distance
from .geometry import VisibilityCone, in_visibility_cone

log = logging.getLogger(__name__)


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    cell: float = 2.0  # meters
    azimuth: float = math.radians(30.0)

    def key(self, x: float, y: float, heading: float) -> tuple[int, int, int]:
        bins = int(round(2 * math.pi / self.azimuth))
        a = math.floor((heading % (2 * math.pi)) / self.azimuth) % bins
        return (math.floor(x / self.cell), math.floor(y / self.cell), a)


@dataclass(frozen=True)
class PlaceClass:
    index: int
    rep_point: tuple[float, float]
    training_frame: int
    grid_key: tuple[int, int, int]


@dataclass(frozen=True)
class PlaceClassSet:
    classes: tuple[PlaceClass, ...]
    grid: GridSpec = GridSpec()

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def rep_points(self) -> list[tuple[float, float]]:
        return [c.rep_point for c in self.classes]

    def grid_unique(self) -> bool:
        keys = [c.grid_key for c in self.classes]
        return len(set(keys)) == len(keys)


@dataclass
class LabeledSplit:
    train: list[tuple[int, int]]  # (frame id, class)
    test: list[tuple[int, int]]
    excluded: list[int]


def assign_class(camera, classes: PlaceClassSet, cone: VisibilityCone = VisibilityCone()):
    """Class whose representative point is the closest one inside the camera's cone."""
    best, best_d = None, math.inf
    for c in classes.classes:
        if in_visibility_cone(c.rep_point, camera, cone):
            d = math.hypot(c.rep_point[0] - camera[0], c.rep_point[1] - camera[1])
            if d < best_d:
                best, best_d = c.index, d
    return best


def _rep_point(frame, cone: VisibilityCone, rng: np.random.Generator) -> tuple[float, float]:
    """A free-space point inside the frame's cone, at a distance within its visible depth."""
    intr = frame.intrinsics
    x, y, heading = frame.pose.planar()
    half = 0.95 * min(cone.hfov, intr.hfov) / 2
    row = int(round(intr.cy))
    for _ in range(64):
        bearing = rng.uniform(-half, half)
        u = int(round(intr.cx - intr.fx * math.tan(bearing)))
        u = min(max(u, 0), intr.width - 1)
        z = float(frame.depth[row, u])
        if z <= 0:
            continue
        free = min(z / math.cos(bearing), 0.95 * cone.max_range)
        r = rng.uniform(0.2 * free, 0.8 * free)
        a = heading + bearing
        return (x + r * math.cos(a), y + r * math.sin(a))
    raise DatasetError(f"frame {frame.frame_id} has no valid depth along its horizon")


def sample_place_classes(pool, K: int, grid: GridSpec = GridSpec(),
                         cone: VisibilityCone = VisibilityCone(), seed: int = 0,
                         hardness: bool = False) -> PlaceClassSet:
    """Seeded class centers, at most one per grid cell, each frame its class's training image.

    With ``hardness`` the centers are the frames most similar (NBNN on
    whole-image features) to one random seed frame, which makes the training
    images hard to tell apart.
    """
    if K < 1:
        raise DatasetError("K must be positive")
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(pool)))
    if hardness:
        center = pool[order[0]]
        ref = extract_features(center)
        dist = [nbnn_distance(extract_features(f), ref) for f in pool]
        order = sorted(range(len(pool)), key=lambda i: (dist[i], i))
    chosen, used = [], set()
    for i in order:
        key = grid.key(*pool[i].pose.planar())
        if key in used:
            continue
        used.add(key)
        chosen.append((int(i), key))
        if len(chosen) == K:
            break
    if len(chosen) < K:
        raise DatasetError(f"pool spans only {len(chosen)} grid cells, {K} classes requested")
    classes = []
    for c, (i, key) in enumerate(chosen):
        classes.append(PlaceClass(c, _rep_point(pool[i], cone, rng), pool[i].frame_id, key))
    return PlaceClassSet(tuple(classes), grid)


def build_split(pool, classes: PlaceClassSet, cone: VisibilityCone = VisibilityCone()) -> LabeledSplit:
    training = {c.training_frame: c.index for c in classes.classes}
    train = sorted(((fid, c) for fid, c in training.items()), key=lambda t: t[1])
    test, excluded = [], []
    for f in pool:
        if f.frame_id in training:
            continue
        c = assign_class(f.pose.planar(), classes, cone)
        if c is None:
            excluded.append(f.frame_id)
        else:
            test.append((f.frame_id, c))
    counts = np.bincount([c for _, c in test], minlength=len(classes))
    for c in np.flatnonzero(counts == 0):
        log.warning("class %d has no test frames", c)
    log.info("split: %d train, %d test, %d excluded", len(train), len(test), len(excluded))
    return LabeledSplit(train, test, excluded)


def save_split(path, classes: PlaceClassSet, split: LabeledSplit, cone: VisibilityCone) -> None:
    doc = {
        "grid": {"cell": classes.grid.cell, "azimuth": classes.grid.azimuth},
        "cone": {"hfov": cone.hfov, "max_range": cone.max_range},
        "classes": [{"id": c.index, "rep_point": list(c.rep_point), "training_frame": c.training_frame,
                     "grid_key": list(c.grid_key)} for c in classes.classes],
        "train": [list(t) for t in split.train],
        "test": [list(t) for t in split.test],
        "excluded": split.excluded,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_split(path) -> tuple[PlaceClassSet, LabeledSplit, VisibilityCone]:
    doc = json.loads(Path(path).read_text())
    grid = GridSpec(**doc["grid"])
    classes = PlaceClassSet(tuple(
        PlaceClass(c["id"], tuple(c["rep_point"]), c["training_frame"], tuple(c["grid_key"]))
        for c in doc["classes"]), grid)
    split = LabeledSplit([tuple(t) for t in doc["train"]], [tuple(t) for t in doc["test"]], doc["excluded"])
    return classes, split, VisibilityCone(**doc["cone"])
