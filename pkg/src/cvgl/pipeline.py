"""Stage functions behind the command line, each reading and writing files in one run directory.

Layout of a run directory::

    config.json            resolved configuration
    world.json             generated world
    frames/                rendered frameset (manifest.json + rasters)
    split.json             class table and train/test assignment
    vocab/                 one prototype feature file per class + manifest.json
    graphs_n{N}.cvsg       synthesized training graphs for N virtual views
    graphs_n{N}.json       their manifest
    model_n{N}.cvgn        trained GCN
    eval_n{N}.json         online evaluation (ranks, latency, synthesis calls)
    report.csv, sweep.csv, report.json, report.txt
"""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import gcn, instrument
from .dataset import GridSpec, build_split, load_split, sample_place_classes, save_split
from .descriptors import FileExtractor, Vocabulary, build_vocabulary, extract_features, read_features, write_features
from .evaluation import (
    METHODS,
    Benchmark,
    BenchmarkConfig,
    BenchmarkReport,
    baseline_global_l2,
    baseline_nbnn,
    baseline_semantic_histogram,
    global_descriptor,
    mrr,
    online_graph,
    true_rank,
    _histogram,
)
from .geometry import CameraIntrinsics, VisibilityCone
from .scene_graph import decode_store, encode_store
from .synthworld import WorldSpec, generate_world, load_frameset, render_sweep, sample_pose_sweep, save_frameset
from .view_synthesis import VirtualViewpointSpec, synthesize_training_set

log = logging.getLogger(__name__)

DESCRIPTORS = ("builtin", "files")
_NESTED = {"world": WorldSpec, "grid": GridSpec, "cone": VisibilityCone,
           "intrinsics": CameraIntrinsics, "train": gcn.TrainConfig}


class StageError(RuntimeError):
    """A stage could not run; the message says what is missing or wrong."""


@dataclass
class PipelineConfig:
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    descriptor: str = "builtin"
    features_dir: str | None = None  # {frame_id:05d}.cvft files when descriptor == "files"
    latency_queries: int = 40

    def __post_init__(self):
        if self.descriptor not in DESCRIPTORS:
            raise StageError(f"descriptor must be one of {DESCRIPTORS}, got {self.descriptor!r}")
        if self.descriptor == "files" and not self.features_dir:
            raise StageError("descriptor 'files' needs features_dir")

    def extractor(self):
        if self.descriptor == "files":
            return FileExtractor(self.features_dir)
        return extract_features

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=list))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        unknown = set(doc) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise StageError(f"unknown config keys: {sorted(unknown)}")
        bench = _build(BenchmarkConfig, doc.pop("benchmark", {}))
        return cls(benchmark=bench, **doc)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise StageError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Every random stream re-derived from one seed; other settings kept."""
        b = self.benchmark
        keep = {f.name: getattr(b, f.name) for f in dataclasses.fields(b)
                if f.name not in ("world_seed", "pose_seed", "class_seed", "synth_seed", "train")}
        bench = BenchmarkConfig.seeded(seed, **keep)
        bench.train = dataclasses.replace(b.train, seed=bench.train.seed)
        return dataclasses.replace(self, benchmark=bench)


def _build(cls, doc: dict):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(names)
    if unknown:
        raise StageError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = {}
    for k, v in doc.items():
        if k in _NESTED and isinstance(v, dict):
            v = _build(_NESTED[k], v)
        elif isinstance(v, list):
            v = tuple(v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise StageError(f"bad {cls.__name__}: {exc}") from exc


# --- run directory ---------------------------------------------------------

class RunDir:
    def __init__(self, root):
        self.root = Path(root)

    def __truediv__(self, name) -> Path:
        return self.root / name

    def require(self, name: str, what: str, stage: str) -> Path:
        path = self.root / name
        if not path.exists():
            raise StageError(f"missing {what} ({path}); run `cvgl {stage}` first")
        return path

    def graphs(self, n: int) -> Path:
        return self.root / f"graphs_n{n}.cvsg"

    def model(self, n: int) -> Path:
        return self.root / f"model_n{n}.cvgn"

    def evaluation(self, n: int) -> Path:
        return self.root / f"eval_n{n}.json"


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _load_inputs(run: RunDir):
    run.require("frames/manifest.json", "frameset", "world gen")
    frames, _ = load_frameset(run / "frames")
    run.require("split.json", "split", "dataset build")
    classes, split, cone = load_split(run / "split.json")
    return frames, classes, split, cone


def _load_vocab(run: RunDir, K: int) -> Vocabulary:
    run.require("vocab/manifest.json", "vocabulary", "dataset build")
    doc = json.loads((run / "vocab/manifest.json").read_text())
    if len(doc["files"]) != K:
        raise StageError(f"vocabulary has {len(doc['files'])} prototypes, split has {K} classes")
    return Vocabulary([read_features(run / "vocab" / name) for name in doc["files"]])


# --- stages ----------------------------------------------------------------

def world_gen(cfg: PipelineConfig, out) -> dict:
    run = RunDir(out)
    run.root.mkdir(parents=True, exist_ok=True)
    b = cfg.benchmark
    world = generate_world(b.world_seed, b.world)
    poses = sample_pose_sweep(world, b.n_poses, b.pose_seed, b.camera_height, b.pose_clearance)
    frames = render_sweep(world, poses, b.intrinsics)
    (run / "config.json").write_text(cfg.dumps())
    (run / "world.json").write_text(world.to_json())
    save_frameset(run / "frames", frames, b.world_seed)
    return {"frames": len(frames), "objects": len(world.objects)}


def dataset_build(cfg: PipelineConfig, out) -> dict:
    run = RunDir(out)
    run.require("frames/manifest.json", "frameset", "world gen")
    frames, _ = load_frameset(run / "frames")
    b = cfg.benchmark
    classes = sample_place_classes(frames, b.K, b.grid, b.cone, b.class_seed, b.hardness)
    split = build_split(frames, classes, b.cone)
    save_split(run / "split.json", classes, split, b.cone)
    by_id = {f.frame_id: f for f in frames}
    training = [by_id[c.training_frame] for c in classes.classes]
    vocab = build_vocabulary(training, cfg.extractor())
    (run / "vocab").mkdir(exist_ok=True)
    names = []
    for c, proto in enumerate(vocab.prototypes):
        names.append(f"{c:03d}.cvft")
        write_features(run / "vocab" / names[-1], proto)
    _write_json(run / "vocab/manifest.json", {"files": names, "descriptor": cfg.descriptor})
    return {"train": len(split.train), "test": len(split.test), "excluded": len(split.excluded)}


def synth(cfg: PipelineConfig, out, n_synth: int) -> dict:
    run = RunDir(out)
    frames, classes, split, _ = _load_inputs(run)
    vocab = _load_vocab(run, len(classes))
    b = cfg.benchmark
    by_id = {f.frame_id: f for f in frames}
    spec = VirtualViewpointSpec(count=n_synth, radii=b.radii, height=b.camera_height)
    training = [(by_id[fid], c) for fid, c in split.train]
    graphs = synthesize_training_set(training, classes.rep_points, vocab, spec, b.synth_seed,
                                     b.min_part_area, cfg.extractor())
    data, offsets = encode_store([g.graph for g in graphs])
    run.graphs(n_synth).write_bytes(data)
    entries = [{"offset": off, "class": g.class_label, "viewpoint": g.viewpoint_index,
                "margin": round(g.margin, 6), "nodes": len(g.graph.nodes)}
               for g, off in zip(graphs, offsets)]
    _write_json(run.root / f"graphs_n{n_synth}.json",
                {"store": run.graphs(n_synth).name, "n_synth": n_synth, "graphs": entries})
    return {"graphs": len(graphs), "bytes": len(data)}


def train(cfg: PipelineConfig, out, n_synth: int) -> dict:
    run = RunDir(out)
    store = run.require(run.graphs(n_synth).name, f"graph store for N={n_synth}", f"synth --n-synth {n_synth}")
    manifest = json.loads((run.root / f"graphs_n{n_synth}.json").read_text())
    graphs = decode_store(store.read_bytes())
    labels = [e["class"] for e in manifest["graphs"]]
    K = cfg.benchmark.K
    t = cfg.benchmark.train
    net = gcn.train(gcn.GraphNet.init(K, t.hidden, t.seed), graphs, labels, t)
    gcn.save_model(run.model(n_synth), net)
    return {"graphs": len(graphs), "model_bytes": run.model(n_synth).stat().st_size,
            "store_bytes": store.stat().st_size}


def evaluate(cfg: PipelineConfig, out, n_synth: int) -> dict:
    """Online path only: graph extraction and GCN ranking for every test frame."""
    run = RunDir(out)
    model = run.model(n_synth)
    if not model.exists():
        raise StageError(f"missing model for N={n_synth} ({model}); run `cvgl train --n-synth {n_synth}` first")
    net = gcn.load_model(model)
    frames, classes, split, _ = _load_inputs(run)
    vocab = _load_vocab(run, len(classes))
    if not split.test:
        raise StageError("split has no test frames")
    by_id = {f.frame_id: f for f in frames}
    extractor = cfg.extractor()
    ranks, seconds = [], []
    with instrument.recording() as calls:
        for fid, c in split.test:
            t0 = time.perf_counter()
            ranking = gcn.predict_ranking(net, online_graph(by_id[fid], vocab, cfg.benchmark.min_part_area,
                                                            extractor))
            seconds.append(time.perf_counter() - t0)
            ranks.append(true_rank(ranking, c))
    doc = {"n_synth": n_synth, "n_queries": len(ranks), "mrr": mrr(ranks), "ranks": ranks,
           "frames": [fid for fid, _ in split.test],
           "latency_mean": float(np.mean(seconds)), "latency_samples": seconds,
           "synthesis_calls": calls["synthesize_scene_graph"], "train_calls": calls["train"]}
    _write_json(run.evaluation(n_synth), doc)
    return {k: doc[k] for k in ("n_queries", "mrr", "latency_mean", "synthesis_calls")}


def report(cfg: PipelineConfig, out, sweep=()) -> BenchmarkReport:
    run = RunDir(out)
    b = cfg.benchmark
    evals = {}
    for n in sorted({0, b.n_synth, *sweep}):
        path = run.require(run.evaluation(n).name, f"evaluation for N={n}", f"eval --n-synth {n}")
        evals[n] = json.loads(path.read_text())
    frames, classes, split, _ = _load_inputs(run)
    vocab = _load_vocab(run, len(classes))
    by_id = {f.frame_id: f for f in frames}
    queries = [(by_id[fid], c) for fid, c in split.test]
    for n, e in evals.items():
        if e["frames"] != [fid for fid, _ in split.test]:
            raise StageError(f"eval_n{n}.json was computed on a different split; rerun `cvgl eval`")
    training = [by_id[c.training_frame] for c in classes.classes]
    extractor = cfg.extractor()
    train_desc = np.array([global_descriptor(t) for t in training])
    ranks = {
        "semantic_histogram": [true_rank(baseline_semantic_histogram(f, training, b.num_labels), c)
                               for f, c in queries],
        "global_l2": [true_rank(baseline_global_l2(f, training, train_desc), c) for f, c in queries],
        "nbnn": [true_rank(baseline_nbnn(f, vocab, extractor), c) for f, c in queries],
        "gcn_rrv": evals[0]["ranks"],
        "gcn_rrv_vs": evals[b.n_synth]["ranks"],
    }
    bench = Benchmark(b, frames, classes, split, vocab)
    rep = BenchmarkReport(
        mrr={m: mrr(ranks[m]) for m in METHODS},
        n_queries=len(queries),
        rank_histograms={m: _histogram(ranks[m], len(classes)) for m in METHODS},
        sweep=[(n, evals[n]["mrr"]) for n in sorted(sweep)],
        timings={},
        latency={n: e["latency_mean"] for n, e in evals.items()},
        online_synthesis_calls=sum(e["synthesis_calls"] for e in evals.values()),
        split_hash=bench.split_hash(),
        config=b.to_dict(),
        ranks=ranks,
    )
    (run / "report.csv").write_text(rep.methods_csv(b.world_seed))
    (run / "sweep.csv").write_text(rep.sweep_csv())
    # wall-clock latency stays out of the files so reruns are byte-identical
    (run / "report.txt").write_text(dataclasses.replace(rep, latency={}).table() + "\n")
    _write_json(run / "report.json", {"mrr": rep.mrr, "n_queries": rep.n_queries, "sweep": rep.sweep,
                                      "split_hash": rep.split_hash,
                                      "rank_histograms": rep.rank_histograms,
                                      "online_synthesis_calls": rep.online_synthesis_calls})
    return rep
