"""MRR scoring, baseline rankers and the with/without view-synthesis benchmark."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gcn, instrument
from .dataset import GridSpec, LabeledSplit, PlaceClassSet, build_split, sample_place_classes
from .descriptors import (Vocabulary, build_vocabulary, describe_graph, extract_features,
                          ranks_from_distances)
from .geometry import MARGIN_LABEL, CameraIntrinsics, VisibilityCone
from .parallel import ordered_map
from .scene_graph import DEFAULT_MIN_PART_AREA, build_graph, extract_parts
from .synthworld import WorldSpec, generate_world, render_sweep, sample_pose_sweep
from .view_synthesis import VirtualViewpointSpec, synthesize_training_set

log = logging.getLogger(__name__)

METHODS = ("semantic_histogram", "global_l2", "nbnn", "gcn_rrv", "gcn_rrv_vs")


def mrr(ranks) -> float:
    """Mean reciprocal rank of 1-based ranks, as a percentage."""
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise ValueError("mrr of an empty rank list")
    if np.any(r < 1):
        raise ValueError("ranks are 1-based")
    return float(100.0 * np.mean(1.0 / r))


def chance_mrr(K: int) -> float:
    """Expected MRR (percent) of a uniformly random ranking over K classes."""
    return 100.0 * float(np.sum(1.0 / np.arange(1, K + 1))) / K


def true_rank(ranking, true_class: int) -> int:
    return int(np.flatnonzero(np.asarray(ranking) == true_class)[0]) + 1


def ranking_from_dissimilarity(d) -> np.ndarray:
    return np.argsort(np.asarray(d, dtype=np.float64), kind="stable")


# --- baselines -------------------------------------------------------------

def semantic_histogram(labels: np.ndarray, num_labels: int) -> np.ndarray:
    lab = np.asarray(labels).ravel()
    lab = lab[lab != MARGIN_LABEL]
    h = np.bincount(lab, minlength=num_labels).astype(np.float64)[:num_labels]
    s = h.sum()
    return h / s if s > 0 else h


def histogram_dissimilarity(a: np.ndarray, b: np.ndarray) -> float:
    """One minus histogram intersection."""
    return float(1.0 - np.minimum(a, b).sum())


def baseline_semantic_histogram(frame, training_frames, num_labels: int = 16) -> np.ndarray:
    q = semantic_histogram(frame.labels, num_labels)
    d = [histogram_dissimilarity(q, semantic_histogram(t.labels, num_labels)) for t in training_frames]
    return ranking_from_dissimilarity(d)


def global_descriptor(frame) -> np.ndarray:
    g = extract_features(frame).descriptors.mean(axis=0)
    n = np.linalg.norm(g)
    return g / n if n > 0 else g


def baseline_global_l2(frame, training_frames, training_descriptors=None) -> np.ndarray:
    """Ranking by L2 distance between global descriptors.

    ``training_descriptors`` may carry precomputed ``global_descriptor`` rows.
    """
    q = global_descriptor(frame)
    if training_descriptors is None:
        training_descriptors = np.array([global_descriptor(t) for t in training_frames])
    d = np.linalg.norm(np.asarray(training_descriptors) - q, axis=1)
    return ranking_from_dissimilarity(d)


def baseline_nbnn(frame, vocab: Vocabulary, extractor=extract_features) -> np.ndarray:
    return ranking_from_dissimilarity(vocab.distances(extractor(frame, None)))


# --- online path -----------------------------------------------------------

def online_graph(frame, vocab: Vocabulary, min_part_area: int = DEFAULT_MIN_PART_AREA,
                 extractor=extract_features):
    parts = extract_parts(frame.labels, min_part_area)
    return describe_graph(build_graph(parts, frame.labels.shape), frame, vocab, extractor)


def online_rank(net: gcn.GraphNet, frame, vocab: Vocabulary,
                min_part_area: int = DEFAULT_MIN_PART_AREA, extractor=extract_features) -> np.ndarray:
    """Graph extraction plus GCN ranking for one query; the whole online cost."""
    return gcn.predict_ranking(net, online_graph(frame, vocab, min_part_area, extractor))


# --- benchmark -------------------------------------------------------------

@dataclass
class BenchmarkConfig:
    world_seed: int = 7
    world: WorldSpec = field(default_factory=WorldSpec)
    n_poses: int = 400
    pose_seed: int = 1
    pose_clearance: float = 0.5
    camera_height: float = 1.2
    K: int = 20
    class_seed: int = 0
    hardness: bool = False
    grid: GridSpec = field(default_factory=GridSpec)
    cone: VisibilityCone = field(default_factory=VisibilityCone)
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    n_synth: int = 10
    sweep: tuple[int, ...] = ()
    radii: tuple[float, ...] = (0.5, 1.0, 1.5)
    synth_seed: int = 0
    min_part_area: int = DEFAULT_MIN_PART_AREA
    train: gcn.TrainConfig = field(default_factory=gcn.TrainConfig)
    num_labels: int = 16

    @classmethod
    def seeded(cls, seed: int, **overrides) -> "BenchmarkConfig":
        """Config whose every random stream derives from ``seed``."""
        base = dict(world_seed=seed, pose_seed=seed + 1000, class_seed=seed + 2000,
                    synth_seed=seed + 3000, train=gcn.TrainConfig(seed=seed + 4000))
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=list))


@dataclass
class Benchmark:
    """Frames, classes, split and vocabulary shared by every method."""

    config: BenchmarkConfig
    frames: list
    classes: PlaceClassSet
    split: LabeledSplit
    vocab: Vocabulary

    @property
    def by_id(self) -> dict:
        return {f.frame_id: f for f in self.frames}

    def training_frames(self) -> list:
        ids = self.by_id
        return [ids[fid] for fid, _ in sorted(self.split.train, key=lambda t: t[1])]

    def split_hash(self) -> str:
        doc = json.dumps([self.split.train, self.split.test, self.split.excluded])
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


def prepare_benchmark(config: BenchmarkConfig) -> Benchmark:
    world = generate_world(config.world_seed, config.world)
    poses = sample_pose_sweep(world, config.n_poses, config.pose_seed, config.camera_height,
                              config.pose_clearance)
    frames = render_sweep(world, poses, config.intrinsics)
    classes = sample_place_classes(frames, config.K, config.grid, config.cone, config.class_seed,
                                   config.hardness)
    split = build_split(frames, classes, config.cone)
    bench = Benchmark(config, frames, classes, split, None)
    bench.vocab = build_vocabulary(bench.training_frames())
    return bench


def train_gcn(bench: Benchmark, n_synth: int) -> tuple[gcn.GraphNet, list]:
    cfg = bench.config
    spec = VirtualViewpointSpec(count=n_synth, radii=cfg.radii, height=cfg.camera_height)
    training = [(bench.by_id[fid], c) for fid, c in bench.split.train]
    graphs = synthesize_training_set(training, bench.classes.rep_points, bench.vocab, spec,
                                     cfg.synth_seed, cfg.min_part_area)
    net = gcn.GraphNet.init(len(bench.classes), cfg.train.hidden, cfg.train.seed)
    net = gcn.train(net, [g.graph for g in graphs], [g.class_label for g in graphs], cfg.train)
    return net, graphs


@dataclass
class BenchmarkReport:
    mrr: dict[str, float]
    n_queries: int
    rank_histograms: dict[str, list[int]]
    sweep: list[tuple[int, float]]
    timings: dict[str, float]
    latency: dict[int, float]
    online_synthesis_calls: int
    split_hash: str
    config: dict
    ranks: dict[str, list[int]] = field(default_factory=dict)
    latency_samples: dict[int, list[float]] = field(default_factory=dict)

    def methods_csv(self, seed: int) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "mrr_percent", "n_queries", "seed"])
        for m, v in self.mrr.items():
            w.writerow([m, f"{v:.4f}", self.n_queries, seed])
        return buf.getvalue()

    def sweep_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n_synth", "mrr_percent"])
        for n, v in self.sweep:
            w.writerow([n, f"{v:.4f}"])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{'method':<22}{'MRR [%]':>10}", "-" * 32]
        lines += [f"{m:<22}{v:>10.2f}" for m, v in self.mrr.items()]
        lines.append(f"queries: {self.n_queries}   split: {self.split_hash}   "
                     f"chance: {chance_mrr(self.config['K']):.2f}")
        if self.sweep:
            lines.append("n_synth  MRR [%]")
            lines += [f"{n:>7}  {v:7.2f}" for n, v in self.sweep]
        if self.latency:
            lines.append("online latency per query [s]: " +
                         ", ".join(f"N={n}: {t:.4f}" for n, t in sorted(self.latency.items())))
        return "\n".join(lines)


def _histogram(ranks, K) -> list[int]:
    return np.bincount(np.asarray(ranks) - 1, minlength=K).tolist()


def measure_latency(nets: dict, queries, vocab: Vocabulary,
                    min_part_area: int = DEFAULT_MIN_PART_AREA, repeats: int = 1,
                    extractor=extract_features):
    """Per-query wall time of the full online path for each model.

    Models are interleaved in rotating order per query so drift in machine
    load spreads evenly across them. Returns ``{key: [seconds per query]}``
    and the number of synthesis calls made while timing.
    """
    keys = list(nets)
    times = {k: [] for k in keys}
    with instrument.recording() as calls:
        for qi, (frame, _) in enumerate(queries):
            rot = keys[qi % len(keys):] + keys[:qi % len(keys)]
            for k in rot:
                best = np.inf
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    online_rank(nets[k], frame, vocab, min_part_area, extractor)
                    best = min(best, time.perf_counter() - t0)
                times[k].append(best)
    return times, calls["synthesize_scene_graph"]


def run_benchmark(config: BenchmarkConfig, bench: Benchmark | None = None,
                  latency_queries: int = 40) -> BenchmarkReport:
    timings = {}
    t0 = time.perf_counter()
    if bench is None:
        bench = prepare_benchmark(config)
    timings["prepare"] = time.perf_counter() - t0
    ids = bench.by_id
    queries = [(ids[fid], c) for fid, c in bench.split.test]
    if not queries:
        raise ValueError("benchmark split has no test frames")
    training = bench.training_frames()
    K = len(bench.classes)

    ranks: dict[str, list[int]] = {}
    t0 = time.perf_counter()
    ranks["semantic_histogram"] = [
        true_rank(baseline_semantic_histogram(f, training, config.num_labels), c) for f, c in queries]
    train_desc = np.array([global_descriptor(t) for t in training])
    ranks["global_l2"] = [true_rank(baseline_global_l2(f, training, train_desc), c) for f, c in queries]
    ranks["nbnn"] = [true_rank(baseline_nbnn(f, bench.vocab), c) for f, c in queries]
    timings["baselines"] = time.perf_counter() - t0

    counts = sorted({0, config.n_synth, *config.sweep})
    nets = {}
    for n in counts:
        t0 = time.perf_counter()
        nets[n], _ = train_gcn(bench, n)
        timings[f"offline_n{n}"] = time.perf_counter() - t0

    # the online graphs do not depend on the model, so describe each query once
    with instrument.recording() as calls:
        t0 = time.perf_counter()
        graphs = ordered_map(lambda q: online_graph(q[0], bench.vocab, config.min_part_area), queries)
        timings["online_graphs"] = time.perf_counter() - t0
        by_n = {n: [true_rank(gcn.predict_ranking(nets[n], g), c) for g, (_, c) in zip(graphs, queries)]
                for n in counts}
    step = max(1, len(queries) // max(latency_queries, 1))
    times, timed_calls = measure_latency(nets, queries[::step][:latency_queries], bench.vocab,
                                         config.min_part_area)
    ranks["gcn_rrv"] = by_n[0]
    ranks["gcn_rrv_vs"] = by_n[config.n_synth]

    return BenchmarkReport(
        mrr={m: mrr(ranks[m]) for m in METHODS},
        n_queries=len(queries),
        rank_histograms={m: _histogram(ranks[m], K) for m in METHODS},
        sweep=[(n, mrr(by_n[n])) for n in sorted(config.sweep)],
        timings=timings,
        latency={n: float(np.mean(t)) for n, t in times.items()},
        latency_samples=times,
        online_synthesis_calls=calls["synthesize_scene_graph"] + timed_calls,
        split_hash=bench.split_hash(),
        config=config.to_dict(),
        ranks={**ranks, **{f"gcn_n{n}": by_n[n] for n in counts}},
    )
