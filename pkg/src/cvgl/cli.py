"""``cvgl`` command line: one subcommand per pipeline stage.

    cvgl world gen      --out RUN [--config FILE] [--seed S]
    cvgl dataset build  --out RUN
    cvgl synth          --out RUN [--n-synth N]
    cvgl train          --out RUN [--n-synth N]
    cvgl eval           --out RUN [--n-synth N]
    cvgl report         --out RUN [--sweep 0,5,10,20]

``world gen`` resolves the configuration and stores it as ``RUN/config.json``;
later stages read it from there unless ``--config`` is given again. Exit
status is 0 on success, 1 when a stage fails and 2 on usage errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .dataset import DatasetError
from .gcn import TrainingError
from .io import FormatError
from .scene_graph import RecordError
from .synthworld import WorldGenerationError

STAGE_ERRORS = (pipeline.StageError, DatasetError, TrainingError, FormatError, RecordError,
                WorldGenerationError, OSError, ValueError)


def _sweep(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("synthesis counts must be non-negative")
    return values


def _count(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=Path("cvgl-run"), help="run directory")
    common.add_argument("--config", type=Path, help="JSON pipeline config")
    common.add_argument("--seed", type=_count, help="derive every random stream from this seed")
    common.add_argument("--n-synth", type=_count, help="virtual viewpoints per class")
    common.add_argument("--sweep", type=_sweep, default=(), help="comma-separated N values for report")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cvgl", description="Cross-view place classification pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    world = sub.add_parser("world", help="world generation").add_subparsers(dest="action", required=True)
    world.add_parser("gen", parents=[common], help="generate the world and render the pose sweep")
    dataset = sub.add_parser("dataset", help="benchmark construction").add_subparsers(dest="action", required=True)
    dataset.add_parser("build", parents=[common], help="sample classes, split and vocabulary")
    sub.add_parser("synth", parents=[common], help="synthesize training graphs (offline)")
    sub.add_parser("train", parents=[common], help="train the GCN on a graph store (offline)")
    sub.add_parser("eval", parents=[common], help="rank every test frame (online path only)")
    sub.add_parser("report", parents=[common], help="baselines, MRR table and N-sweep CSV")
    return parser


def resolve_config(args) -> pipeline.PipelineConfig:
    stored = args.out / "config.json"
    if args.config is not None:
        cfg = pipeline.PipelineConfig.load(args.config)
    elif stored.exists() and not (args.command == "world"):
        cfg = pipeline.PipelineConfig.load(stored)
    else:
        cfg = pipeline.PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def run(args) -> dict | str:
    cfg = resolve_config(args)
    n = cfg.benchmark.n_synth if args.n_synth is None else args.n_synth
    if args.command == "world":
        return pipeline.world_gen(cfg, args.out)
    if args.command == "dataset":
        return pipeline.dataset_build(cfg, args.out)
    if args.command == "synth":
        return pipeline.synth(cfg, args.out, n)
    if args.command == "train":
        return pipeline.train(cfg, args.out, n)
    if args.command == "eval":
        return pipeline.evaluate(cfg, args.out, n)
    if args.n_synth is not None:
        cfg.benchmark.n_synth = args.n_synth
    return pipeline.report(cfg, args.out, args.sweep).table()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run(args)
    except STAGE_ERRORS as exc:
        print(f"cvgl: error: {exc}", file=sys.stderr)
        return 1
    print(result if isinstance(result, str) else json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
