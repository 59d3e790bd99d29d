"""Two-layer mean-aggregation graph network with hand-written backprop.

Per layer ``h'_v = relu(h_v W_self + mean_{u in N(v)} h_u W_nbr + b)``; a
mean readout over nodes feeds a linear classifier. Everything is float64 and
graphs are batched block-diagonally so a full-batch step is a handful of
sparse and dense matrix products.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import instrument
from .scene_graph import IMAGE, PART, SceneGraph

PARAM_ORDER = ("W_self1", "W_nbr1", "b1", "W_self2", "W_nbr2", "b2", "W_out", "b_out")
MODEL_MAGIC = b"CVGN"
_MODEL_HEADER = struct.Struct("<4sIII")


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


def feature_dim(num_classes: int) -> int:
    return num_classes + 6


def node_features(graph: SceneGraph, num_classes: int) -> np.ndarray:
    """RRV, node-kind one-hot and normalized box for every node."""
    X = np.zeros((len(graph.nodes), feature_dim(num_classes)))
    for i, n in enumerate(graph.nodes):
        if n.descriptor is None:
            raise ValueError(f"node {i} has no descriptor")
        if n.descriptor.size != num_classes:
            raise ValueError(f"node {i} descriptor has {n.descriptor.size} entries, expected {num_classes}")
        X[i, :num_classes] = n.descriptor
        X[i, num_classes + (0 if n.kind == IMAGE else 1)] = 1.0
        u0, v0, u1, v1 = n.bbox
        X[i, num_classes + 2 :] = (u0 / graph.width, v0 / graph.height, u1 / graph.width, v1 / graph.height)
    return X


@dataclass
class GraphBatch:
    X: np.ndarray  # (nodes, F)
    A: sp.csr_matrix  # row-normalized adjacency; isolated rows are zero
    P: sp.csr_matrix  # (graphs, nodes) mean-readout operator
    y: np.ndarray | None = None

    @property
    def num_graphs(self) -> int:
        return self.P.shape[0]


def make_batch(graphs, num_classes: int, labels=None) -> GraphBatch:
    feats, rows, cols, prow, pcol, pval = [], [], [], [], [], []
    offset = 0
    for g_idx, g in enumerate(graphs):
        n = len(g.nodes)
        feats.append(node_features(g, num_classes))
        for i, j, _ in g.edges:
            rows += [offset + i, offset + j]
            cols += [offset + j, offset + i]
        prow += [g_idx] * n
        pcol += range(offset, offset + n)
        pval += [1.0 / n] * n
        offset += n
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(offset, offset))
    adj.sum_duplicates()
    adj.data[:] = 1.0
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    A = sp.diags(inv) @ adj
    P = sp.csr_matrix((pval, (prow, pcol)), shape=(len(feats), offset))
    y = None if labels is None else np.asarray(labels, dtype=np.int64)
    X = np.concatenate(feats) if feats else np.zeros((0, feature_dim(num_classes)))
    return GraphBatch(X, A.tocsr(), P, y)


@dataclass
class GraphNet:
    num_classes: int
    hidden: int
    params: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int = 0

    @property
    def in_dim(self) -> int:
        return feature_dim(self.num_classes)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        F, H, K = self.in_dim, self.hidden, self.num_classes
        return {"W_self1": (F, H), "W_nbr1": (F, H), "b1": (H,),
                "W_self2": (H, H), "W_nbr2": (H, H), "b2": (H,),
                "W_out": (H, K), "b_out": (K,)}

    @classmethod
    def init(cls, num_classes: int, hidden: int = 64, seed: int = 0) -> "GraphNet":
        net = cls(num_classes, hidden, seed=seed)
        rng = np.random.default_rng(seed)
        fan_in = {"W_self1": net.in_dim, "W_nbr1": net.in_dim, "b1": net.in_dim,
                  "W_self2": hidden, "W_nbr2": hidden, "b2": hidden,
                  "W_out": hidden, "b_out": hidden}
        for name in PARAM_ORDER:
            bound = 1.0 / np.sqrt(fan_in[name])
            net.params[name] = rng.uniform(-bound, bound, size=net.shapes()[name])
        return net

    def copy(self) -> "GraphNet":
        return GraphNet(self.num_classes, self.hidden, {k: v.copy() for k, v in self.params.items()}, self.seed)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_ORDER])

    def set_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for k in PARAM_ORDER:
            shape = self.shapes()[k]
            n = int(np.prod(shape))
            self.params[k] = vec[pos : pos + n].reshape(shape).copy()
            pos += n


def _forward(net: GraphNet, batch: GraphBatch):
    p = net.params
    X, A, P = batch.X, batch.A, batch.P
    AX = A @ X
    Z1 = X @ p["W_self1"] + AX @ p["W_nbr1"] + p["b1"]
    H1 = np.maximum(Z1, 0.0)
    AH1 = A @ H1
    Z2 = H1 @ p["W_self2"] + AH1 @ p["W_nbr2"] + p["b2"]
    H2 = np.maximum(Z2, 0.0)
    R = P @ H2
    logits = R @ p["W_out"] + p["b_out"]
    return logits, (AX, Z1, H1, AH1, Z2, R)


def forward_batch(net: GraphNet, batch: GraphBatch) -> np.ndarray:
    return _forward(net, batch)[0]


def forward(net: GraphNet, graph: SceneGraph) -> np.ndarray:
    """Class logits for one described graph."""
    return forward_batch(net, make_batch([graph], net.num_classes))[0]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_gradient(net: GraphNet, batch: GraphBatch) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy over the batch and its exact gradient."""
    if batch.num_graphs == 0 or batch.y is None:
        raise ValueError("loss needs a non-empty labeled batch")
    y = batch.y
    if y.min() < 0 or y.max() >= net.num_classes:
        raise ValueError("labels out of range")
    p = net.params
    logits, (AX, Z1, H1, AH1, Z2, R) = _forward(net, batch)
    G = batch.num_graphs
    logp = _log_softmax(logits)
    loss = -logp[np.arange(G), y].mean()

    dlogits = np.exp(logp)
    dlogits[np.arange(G), y] -= 1.0
    dlogits /= G
    g = {"W_out": R.T @ dlogits, "b_out": dlogits.sum(axis=0)}
    dH2 = batch.P.T @ (dlogits @ p["W_out"].T)
    dZ2 = dH2 * (Z2 > 0)
    g["W_self2"] = H1.T @ dZ2
    g["W_nbr2"] = AH1.T @ dZ2
    g["b2"] = dZ2.sum(axis=0)
    dH1 = dZ2 @ p["W_self2"].T + batch.A.T @ (dZ2 @ p["W_nbr2"].T)
    dZ1 = dH1 * (Z1 > 0)
    g["W_self1"] = batch.X.T @ dZ1
    g["W_nbr1"] = AX.T @ dZ1
    g["b1"] = dZ1.sum(axis=0)
    return float(loss), g


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 0.05
    momentum: float = 0.9
    hidden: int = 64
    seed: int = 0


def train(net: GraphNet, graphs, labels, config: TrainConfig = TrainConfig()) -> GraphNet:
    """Full-batch momentum gradient descent; returns the lowest-loss parameters seen."""
    instrument.count("train")
    batch = make_batch(graphs, net.num_classes, labels)
    net = net.copy()
    velocity = {k: np.zeros_like(v) for k, v in net.params.items()}
    best, best_loss = net.copy(), np.inf
    for epoch in range(config.epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
            loss, grad = loss_and_gradient(net, batch)
        if not np.isfinite(loss):
            raise TrainingError("non-finite training loss", epoch)
        if loss < best_loss:
            best, best_loss = net.copy(), loss
        if epoch == config.epochs:
            break
        for k in PARAM_ORDER:
            velocity[k] = config.momentum * velocity[k] + grad[k]
            net.params[k] = net.params[k] - config.lr * velocity[k]
    return best


def rank_logits(logits) -> np.ndarray:
    """Class indices by descending logit; ties go to the lower index."""
    return np.argsort(-np.asarray(logits, dtype=np.float64), kind="stable")


def predict_ranking(net: GraphNet, graph: SceneGraph) -> np.ndarray:
    return rank_logits(forward(net, graph))


# --- model files -----------------------------------------------------------

def encode_model(net: GraphNet) -> bytes:
    head = _MODEL_HEADER.pack(MODEL_MAGIC, net.num_classes, net.hidden, net.in_dim)
    return head + b"".join(np.asarray(net.params[k], dtype="<f8").tobytes() for k in PARAM_ORDER)


def decode_model(data: bytes) -> GraphNet:
    magic, K, H, F = _MODEL_HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise ValueError(f"bad model magic {magic!r}")
    net = GraphNet(K, H)
    if F != net.in_dim:
        raise ValueError(f"feature dim {F} inconsistent with K={K}")
    vec = np.frombuffer(data, dtype="<f8", offset=_MODEL_HEADER.size).astype(np.float64)
    if vec.size != sum(int(np.prod(s)) for s in net.shapes().values()):
        raise ValueError("model payload size mismatch")
    net.set_flat(vec)
    return net


def save_model(path, net: GraphNet) -> None:
    Path(path).write_bytes(encode_model(net))


def load_model(path) -> GraphNet:
    return decode_model(Path(path).read_bytes())
