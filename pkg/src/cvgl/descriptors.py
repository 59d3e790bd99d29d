"""Local features, the per-class prototype vocabulary, NBNN distance and RRVs.

The built-in extractor ("LitePatch") tiles a region with 16x16 patches on a
stride-16 grid and describes each by the mean and standard deviation of its
sixteen 4x4 sub-blocks, L2-normalized. Deep extractors plug in through the
feature file format.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .scene_graph import SceneGraph

PATCH = 16
STRIDE = 16
SUBBLOCK = 4
LITEPATCH_DIM = 2 * (PATCH // SUBBLOCK) ** 2

FEATURE_MAGIC = b"CVFT"
_FEATURE_HEADER = struct.Struct("<4sII")


@dataclass
class FeatureSet:
    descriptors: np.ndarray  # (n, d)
    keypoints: np.ndarray  # (n, 2) pixel (u, v)

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2)
        if self.descriptors.ndim != 2:
            raise ValueError("descriptors must be a 2-d array")
        if len(self.descriptors) != len(self.keypoints):
            raise ValueError("descriptor and keypoint counts differ")

    def __len__(self) -> int:
        return len(self.descriptors)

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    @classmethod
    def empty(cls, dim: int = LITEPATCH_DIM) -> "FeatureSet":
        return cls(np.zeros((0, dim)), np.zeros((0, 2)))

    def within(self, bbox) -> "FeatureSet":
        """Features whose keypoints fall inside the inclusive box."""
        u, v = self.keypoints.T
        m = (u >= bbox[0]) & (u <= bbox[2]) & (v >= bbox[1]) & (v <= bbox[3])
        return FeatureSet(self.descriptors[m], self.keypoints[m])


def _normalize(desc: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(desc, axis=1, keepdims=True)
    flat = norms[:, 0] == 0
    out = np.divide(desc, norms, out=np.zeros_like(desc), where=norms > 0)
    out[flat] = 1.0 / np.sqrt(desc.shape[1])
    return out


def litepatch(intensity: np.ndarray, region=None) -> FeatureSet:
    """LitePatch features on ``region`` (inclusive ``(umin, vmin, umax, vmax)``)."""
    h, w = intensity.shape
    u0, v0, u1, v1 = (0, 0, w - 1, h - 1) if region is None else region
    if u0 < 0 or v0 < 0 or u1 >= w or v1 >= h:
        raise ValueError(f"region {region} outside raster {w}x{h}")
    nx = (u1 - u0 + 1 - PATCH) // STRIDE + 1
    ny = (v1 - v0 + 1 - PATCH) // STRIDE + 1
    if nx <= 0 or ny <= 0:
        return FeatureSet.empty()
    img = np.asarray(intensity, dtype=np.float64)[v0 : v0 + ny * PATCH, u0 : u0 + nx * PATCH] / 255.0
    b = PATCH // SUBBLOCK
    blocks = img.reshape(ny, b, SUBBLOCK, nx, b, SUBBLOCK).transpose(0, 3, 1, 4, 2, 5)
    blocks = blocks.reshape(ny * nx, b * b, SUBBLOCK * SUBBLOCK)
    desc = np.concatenate([blocks.mean(axis=2), blocks.std(axis=2)], axis=1)
    gy, gx = np.mgrid[0:ny, 0:nx]
    kp = np.column_stack([u0 + gx.ravel() * STRIDE + PATCH // 2, v0 + gy.ravel() * STRIDE + PATCH // 2])
    return FeatureSet(_normalize(desc), kp)


def extract_features(frame, region=None) -> FeatureSet:
    return litepatch(frame.intensity, region)


Extractor = Callable[..., FeatureSet]


class FileExtractor:
    """Serves features precomputed by an external extractor, one file per frame.

    Files are named ``{frame_id:05d}.cvft``; region queries keep the features
    whose keypoints lie inside the region.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self._cache: dict[int, FeatureSet] = {}

    def __call__(self, frame, region=None) -> FeatureSet:
        fs = self._cache.get(frame.frame_id)
        if fs is None:
            fs = read_features(self.directory / f"{frame.frame_id:05d}.cvft")
            self._cache[frame.frame_id] = fs
        return fs if region is None else fs.within(region)


# --- distances and ranks ---------------------------------------------------

def nbnn_distance(query: FeatureSet, prototype: FeatureSet) -> float:
    """Mean over query features of the distance to the nearest prototype feature."""
    if len(query) == 0 or len(prototype) == 0:
        return float("inf")
    if query.dim != prototype.dim:
        raise ValueError(f"descriptor dims differ: {query.dim} vs {prototype.dim}")
    return float(cdist(query.descriptors, prototype.descriptors).min(axis=1).mean())


def _pairwise(a: np.ndarray, b: np.ndarray, b_sq: np.ndarray) -> np.ndarray:
    """Euclidean distances through one matrix product.

    Squared distances below 1e-12 are snapped to zero so coincident
    descriptors compare exactly equal despite cancellation error.
    """
    d2 = np.einsum("ij,ij->i", a, a)[:, None] + b_sq[None, :] - 2.0 * (a @ b.T)
    d2[d2 < 1e-12] = 0.0
    return np.sqrt(d2)


def ranks_from_distances(distances) -> np.ndarray:
    """1-based rank of each entry under ascending distance, ties to the lower index."""
    d = np.asarray(distances, dtype=np.float64)
    order = np.argsort(d, kind="stable")
    ranks = np.empty(d.size, dtype=np.int64)
    ranks[order] = np.arange(1, d.size + 1)
    return ranks


def rrv_from_distances(distances) -> np.ndarray:
    return 1.0 / ranks_from_distances(distances)


@dataclass
class Vocabulary:
    """One prototype feature set per place class; prototype ``i`` is class ``i``."""

    prototypes: list[FeatureSet]

    def __post_init__(self):
        if len(self.prototypes) < 2:
            raise ValueError("a vocabulary needs at least two prototypes")
        dims = {p.dim for p in self.prototypes}
        if len(dims) != 1:
            raise ValueError("prototypes have differing descriptor dims")
        self._stacked = np.concatenate([p.descriptors for p in self.prototypes])
        self._sq_norms = np.einsum("ij,ij->i", self._stacked, self._stacked)
        sizes = np.array([len(p) for p in self.prototypes])
        self._starts = np.r_[0, np.cumsum(sizes)[:-1]]
        self._sizes = sizes

    @property
    def size(self) -> int:
        return len(self.prototypes)

    def distances(self, query: FeatureSet) -> np.ndarray:
        """NBNN distance from ``query`` to every prototype."""
        K = self.size
        if len(query) == 0:
            return np.full(K, np.inf)
        d = _pairwise(query.descriptors, self._stacked, self._sq_norms)
        out = np.full(K, np.inf)
        nz = self._sizes > 0
        if nz.any():
            # empty prototypes have zero-width segments, so skipping their starts is exact
            out[nz] = np.minimum.reduceat(d, self._starts[nz], axis=1).mean(axis=0)
        return out


def rrv(query: FeatureSet, vocab: Vocabulary) -> np.ndarray:
    return rrv_from_distances(vocab.distances(query))


def describe_graph(graph: SceneGraph, frame, vocab: Vocabulary,
                   extractor: Extractor = extract_features) -> SceneGraph:
    """Attach an RRV to every node; parts without features get the uniform 1/K vector."""
    K = vocab.size
    for i, node in enumerate(graph.nodes):
        fs = extractor(frame, None if i == 0 else node.bbox)
        node.descriptor = rrv(fs, vocab) if len(fs) else np.full(K, 1.0 / K)
    return graph


# --- feature files ---------------------------------------------------------

def encode_features(fs: FeatureSet) -> bytes:
    dim = fs.descriptors.shape[1]
    rec = np.empty((len(fs), 2 + dim), dtype="<f4")
    rec[:, :2] = fs.keypoints
    rec[:, 2:] = fs.descriptors
    return _FEATURE_HEADER.pack(FEATURE_MAGIC, dim, len(fs)) + rec.tobytes()


def decode_features(data: bytes) -> FeatureSet:
    magic, dim, count = _FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise ValueError(f"bad feature file magic {magic!r}")
    expected = _FEATURE_HEADER.size + 4 * count * (2 + dim)
    if len(data) != expected:
        raise ValueError(f"feature file size {len(data)} != {expected}")
    rec = np.frombuffer(data, dtype="<f4", offset=_FEATURE_HEADER.size).reshape(count, 2 + dim)
    return FeatureSet(rec[:, 2:].astype(np.float64), rec[:, :2].astype(np.float64))


def write_features(path, fs: FeatureSet) -> None:
    Path(path).write_bytes(encode_features(fs))


def read_features(path) -> FeatureSet:
    return decode_features(Path(path).read_bytes())


def build_vocabulary(frames: Sequence, extractor: Extractor = extract_features) -> Vocabulary:
    """Prototype ``i`` is the whole-image feature set of ``frames[i]``."""
    return Vocabulary([extractor(f, None) for f in frames])
