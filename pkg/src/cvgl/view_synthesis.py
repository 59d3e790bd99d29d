"""Scene-graph synthesis at virtual viewpoints from a single real frame.

Appearance (node RRVs) is computed once on the real frame and inherited by
warped parts; layout (parts, boxes, edges) is recomputed per virtual view
from labels warped through depth back-projection and a Z-buffer.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import instrument
from .descriptors import Extractor, FeatureSet, Vocabulary, describe_graph, extract_features
from .geometry import (MAX_MARGIN_FRACTION, Pose, PointCloud, backproject, margin_fraction,
                       project_zbuffer, relative_pose, transform_points)
from .parallel import ordered_map
from .scene_graph import DEFAULT_MIN_PART_AREA, SceneGraph, build_graph, extract_parts

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VirtualViewpointSpec:
    count: int = 10
    radii: tuple[float, ...] = (0.5, 1.0, 1.5)
    height: float = 1.2
    jitter_deg: float = 5.0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("viewpoint count must be non-negative")
        if not self.radii or min(self.radii) <= 0:
            raise ValueError("ring radii must be positive")


@dataclass
class SynthesizedGraph:
    graph: SceneGraph | None
    class_label: int
    pose: Pose
    viewpoint_index: int  # -1 for the real view
    margin: float = 0.0
    warped_keypoints: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    @property
    def valid(self) -> bool:
        return self.graph is not None

    @property
    def is_real(self) -> bool:
        return self.viewpoint_index < 0


@dataclass
class RealView:
    """Everything synthesis needs from the real frame, computed once."""

    frame: object
    graph: SceneGraph
    part_of_pixel: np.ndarray  # flat; real part index or -1
    cloud: PointCloud
    keypoints: np.ndarray  # (n, 2) integer pixel positions of the real features


def prepare_real_view(frame, vocab: Vocabulary, min_part_area: int = DEFAULT_MIN_PART_AREA,
                      extractor: Extractor = extract_features) -> RealView:
    parts = extract_parts(frame.labels, min_part_area)
    graph = describe_graph(build_graph(parts, frame.labels.shape), frame, vocab, extractor)
    owner = np.full(frame.labels.size, -1, dtype=np.int64)
    for i, p in enumerate(parts):
        owner[p.pixels] = i
    cloud = backproject(frame.depth, frame.intrinsics, frame.labels)
    kp: FeatureSet = extractor(frame, None)
    return RealView(frame, graph, owner, cloud, np.rint(kp.keypoints).astype(np.int64))


def sample_virtual_viewpoints(rep_point, spec: VirtualViewpointSpec = VirtualViewpointSpec(),
                              seed=0) -> list[Pose]:
    """Poses on rings around ``rep_point``, evenly spaced in azimuth, facing it."""
    rng = np.random.default_rng(seed)
    jitter = np.deg2rad(rng.uniform(-spec.jitter_deg, spec.jitter_deg, size=spec.count))
    poses = []
    for i in range(spec.count):
        az = 2 * math.pi * i / spec.count + jitter[i]
        r = spec.radii[i % len(spec.radii)]
        x = rep_point[0] + r * math.cos(az)
        y = rep_point[1] + r * math.sin(az)
        heading = math.atan2(rep_point[1] - y, rep_point[0] - x)
        poses.append(Pose.from_planar(x, y, heading, spec.height))
    return poses


def _warp_keypoints(keypoints: np.ndarray, pixmap: np.ndarray, width: int) -> np.ndarray:
    src = pixmap.ravel()
    hit = np.flatnonzero(src >= 0)
    inverse = np.full(src.size, -1, dtype=np.int64)
    inverse[src[hit]] = hit
    tgt = inverse[keypoints[:, 1] * width + keypoints[:, 0]]
    tgt = tgt[tgt >= 0]
    return np.column_stack([tgt % width, tgt // width])


def synthesize_scene_graph(real, virtual_pose: Pose, vocab: Vocabulary | None = None,
                           class_label: int = -1, viewpoint_index: int = 0,
                           min_part_area: int = DEFAULT_MIN_PART_AREA) -> SynthesizedGraph:
    """Warp ``real`` (a Frame or prepared RealView) to ``virtual_pose``.

    A view whose margin fraction reaches the rejection threshold comes back
    with ``graph=None``.
    """
    instrument.count("synthesize_scene_graph")
    if not isinstance(real, RealView):
        if vocab is None:
            raise ValueError("a vocabulary is needed to describe an unprepared frame")
        real = prepare_real_view(real, vocab, min_part_area)
    frame = real.frame
    intr = frame.intrinsics
    warped = transform_points(real.cloud, relative_pose(frame.pose, virtual_pose))
    labels, _, pixmap = project_zbuffer(warped, intr)
    margin = margin_fraction(labels)
    if margin >= MAX_MARGIN_FRACTION:
        return SynthesizedGraph(None, class_label, virtual_pose, viewpoint_index, margin)

    kept, sources = [], []
    for part in extract_parts(labels, min_part_area):
        owners = real.part_of_pixel[pixmap.flat[part.pixels]]
        owners = owners[owners >= 0]
        if owners.size == 0:
            continue  # nothing to inherit appearance from
        kept.append(part)
        sources.append(int(np.bincount(owners).argmax()))
    graph = build_graph(kept, labels.shape, class_label if class_label >= 0 else None)
    graph.nodes[0].descriptor = real.graph.nodes[0].descriptor.copy()
    for node, src in zip(graph.nodes[1:], sources):
        node.descriptor = real.graph.nodes[src + 1].descriptor.copy()
    kps = _warp_keypoints(real.keypoints, pixmap, intr.width)
    return SynthesizedGraph(graph, class_label, virtual_pose, viewpoint_index, margin, kps)


def synthesize_class(real: RealView, class_label: int, rep_point, spec: VirtualViewpointSpec,
                     seed: int = 0, min_part_area: int = DEFAULT_MIN_PART_AREA) -> list[SynthesizedGraph]:
    """Real graph followed by every valid synthesized graph for one class."""
    real_graph = SceneGraph(real.graph.width, real.graph.height, real.graph.nodes,
                            real.graph.edges, class_label)
    out = [SynthesizedGraph(real_graph, class_label, real.frame.pose, -1)]
    poses = sample_virtual_viewpoints(rep_point, spec, seed=[seed, class_label])
    for i, pose in enumerate(poses):
        s = synthesize_scene_graph(real, pose, class_label=class_label, viewpoint_index=i,
                                   min_part_area=min_part_area)
        if s.valid:
            out.append(s)
    if spec.count > 0 and len(out) == 1:
        log.warning("class %d: no valid synthesized view out of %d; using the real graph only",
                    class_label, spec.count)
    return out


def synthesize_training_set(training, rep_points, vocab: Vocabulary,
                            spec: VirtualViewpointSpec = VirtualViewpointSpec(), seed: int = 0,
                            min_part_area: int = DEFAULT_MIN_PART_AREA,
                            extractor: Extractor = extract_features,
                            workers: int | None = None) -> list[SynthesizedGraph]:
    """All real and valid synthesized graphs, in (class, viewpoint) order.

    ``training`` is a sequence of ``(frame, class_label)``; ``rep_points[c]``
    is the representative point of class ``c``.
    """
    def one(item):
        frame, c = item
        real = prepare_real_view(frame, vocab, min_part_area, extractor)
        return synthesize_class(real, c, rep_points[c], spec, seed, min_part_area)

    groups = ordered_map(one, sorted(training, key=lambda fc: fc[1]), workers)
    return [g for group in groups for g in group]
