"""Semantic scene parts and the two-level scene graph.

Node 0 of every graph is the whole-image node; nodes ``1..n`` are parts.
Bounding boxes are inclusive pixel extents ``(umin, vmin, umax, vmax)``; two
parts are connected when their boxes cover at least one common pixel.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import MARGIN_LABEL

IMAGE, PART = 0, 1
IMAGE_TO_PART, PART_TO_PART = 0, 1
DEFAULT_MIN_PART_AREA = 50

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass
class Part:
    label: int
    bbox: tuple[int, int, int, int]
    pixels: np.ndarray  # flat row-major indices, ascending

    @property
    def area(self) -> int:
        return int(self.pixels.size)


@dataclass
class Node:
    kind: int
    label: int
    bbox: tuple[int, int, int, int]
    area: int
    descriptor: np.ndarray | None = None


@dataclass
class SceneGraph:
    width: int
    height: int
    nodes: list[Node]
    edges: list[tuple[int, int, int]] = field(default_factory=list)
    class_label: int | None = None

    @property
    def parts(self) -> list[Node]:
        return self.nodes[1:]

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.nodes]
        for i, j, _ in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "class_label": self.class_label,
            "nodes": [
                {"kind": "image" if n.kind == IMAGE else "part", "label": n.label,
                 "bbox": list(n.bbox), "area": n.area,
                 "descriptor": None if n.descriptor is None else n.descriptor.tolist()}
                for n in self.nodes
            ],
            "edges": [[i, j, "image-part" if k == IMAGE_TO_PART else "part-part"]
                      for i, j, k in self.edges],
        }

    def dump_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def extract_parts(labels: np.ndarray, min_part_area: int = DEFAULT_MIN_PART_AREA) -> list[Part]:
    """Per-label 4-connected components, ordered by their first pixel in raster scan."""
    labels = np.asarray(labels)
    w = labels.shape[1]
    found = []
    for value in np.unique(labels):
        if value == MARGIN_LABEL:
            continue
        comp, n = ndimage.label(labels == value, structure=_FOUR_CONNECTED)
        if n == 0:
            continue
        flat = comp.ravel()
        idx = np.flatnonzero(flat)
        order = np.argsort(flat[idx], kind="stable")
        ids = flat[idx][order]
        starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]])
        for chunk in np.split(idx[order], starts[1:]):
            if chunk.size < min_part_area:
                continue
            v, u = np.divmod(chunk, w)
            bbox = (int(u.min()), int(v.min()), int(u.max()), int(v.max()))
            found.append(Part(int(value), bbox, chunk))
    found.sort(key=lambda p: int(p.pixels[0]))
    return found


def bbox_overlap_area(a, b) -> int:
    """Number of pixels covered by both inclusive boxes."""
    du = min(a[2], b[2]) - max(a[0], b[0]) + 1
    dv = min(a[3], b[3]) - max(a[1], b[1]) + 1
    return max(du, 0) * max(dv, 0)


def build_graph(parts, shape, class_label: int | None = None) -> SceneGraph:
    height, width = shape
    nodes = [Node(IMAGE, MARGIN_LABEL, (0, 0, width - 1, height - 1), width * height)]
    nodes += [Node(PART, p.label, tuple(p.bbox), p.area) for p in parts]
    edges = [(0, i, IMAGE_TO_PART) for i in range(1, len(nodes))]
    for i in range(1, len(nodes)):
        for j in range(i + 1, len(nodes)):
            if bbox_overlap_area(nodes[i].bbox, nodes[j].bbox) > 0:
                edges.append((i, j, PART_TO_PART))
    return SceneGraph(width, height, nodes, edges, class_label)


def scene_graph_from_labels(labels: np.ndarray, min_part_area: int = DEFAULT_MIN_PART_AREA):
    parts = extract_parts(labels, min_part_area)
    return parts, build_graph(parts, labels.shape)


# --- binary records -------------------------------------------------------

STORE_MAGIC = b"CVSG"
_GRAPH_HEADER = struct.Struct("<IIiIII")
_NODE = struct.Struct("<BBHiiiiI")
_EDGE = struct.Struct("<IIB")


class RecordError(ValueError):
    pass


def _descriptor_dim(graph: SceneGraph) -> int:
    dims = {n.descriptor.size for n in graph.nodes if n.descriptor is not None}
    if len(dims) > 1:
        raise RecordError("nodes carry descriptors of differing length")
    return dims.pop() if dims else 0


def encode_graph(graph: SceneGraph) -> bytes:
    """Length-prefixed record: u32 payload length, then the payload."""
    dim = _descriptor_dim(graph)
    buf = io.BytesIO()
    cls = -1 if graph.class_label is None else graph.class_label
    buf.write(_GRAPH_HEADER.pack(graph.width, graph.height, cls, len(graph.nodes), len(graph.edges), dim))
    for n in graph.nodes:
        has = n.descriptor is not None
        buf.write(_NODE.pack(n.kind, int(has), n.label, *n.bbox, n.area))
        if has:
            buf.write(np.asarray(n.descriptor, dtype="<f8").tobytes())
    for i, j, k in graph.edges:
        buf.write(_EDGE.pack(i, j, k))
    payload = buf.getvalue()
    return struct.pack("<I", len(payload)) + payload


def decode_graph(data: bytes, offset: int = 0) -> tuple[SceneGraph, int]:
    """Decode one record at ``offset``; returns the graph and the next offset."""
    try:
        return _decode_graph(data, offset)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, RecordError):
            raise
        raise RecordError(f"corrupt graph record at offset {offset}: {exc}") from exc


def _decode_graph(data: bytes, offset: int) -> tuple[SceneGraph, int]:
    (length,) = struct.unpack_from("<I", data, offset)
    pos = offset + 4
    end = pos + length
    if end > len(data):
        raise RecordError("truncated graph record")
    width, height, cls, n_nodes, n_edges, dim = _GRAPH_HEADER.unpack_from(data, pos)
    pos += _GRAPH_HEADER.size
    nodes = []
    for _ in range(n_nodes):
        kind, has, label, u0, v0, u1, v1, area = _NODE.unpack_from(data, pos)
        pos += _NODE.size
        desc = None
        if has:
            desc = np.frombuffer(data, dtype="<f8", count=dim, offset=pos).astype(np.float64)
            pos += 8 * dim
        nodes.append(Node(kind, label, (u0, v0, u1, v1), area, desc))
    edges = []
    for _ in range(n_edges):
        edges.append(_EDGE.unpack_from(data, pos))
        pos += _EDGE.size
    if pos != end:
        raise RecordError("graph record length mismatch")
    return SceneGraph(width, height, nodes, [tuple(e) for e in edges], None if cls < 0 else cls), end


def encode_store(graphs) -> tuple[bytes, list[int]]:
    """Concatenate records behind the store magic; returns bytes and record offsets."""
    out = bytearray(STORE_MAGIC)
    offsets = []
    for g in graphs:
        offsets.append(len(out))
        out += encode_graph(g)
    return bytes(out), offsets


def decode_store(data: bytes) -> list[SceneGraph]:
    if data[:4] != STORE_MAGIC:
        raise RecordError(f"bad graph store magic {data[:4]!r}")
    graphs, pos = [], 4
    while pos < len(data):
        g, pos = decode_graph(data, pos)
        graphs.append(g)
    return graphs
