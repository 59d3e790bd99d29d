"""Five-seed benchmark: every method per seed, medians, and the N-sweep.

    python scripts/run_benchmark.py --seeds 7 8 9 10 11 --sweep 0 5 10 20 --out results/

Writes ``methods.csv`` (method, mrr_percent, n_queries, seed),
``sweep.csv`` (seed, n_synth, mrr_percent) and ``latency.csv``
(seed, n_synth, query, seconds) under ``--out``.
"""
import argparse
import csv
import logging
import statistics
import time
from pathlib import Path

from cvgl.evaluation import METHODS, BenchmarkConfig, chance_mrr, mrr, run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[7, 8, 9, 10, 11])
    ap.add_argument("--sweep", type=int, nargs="*", default=[0, 10, 20])
    ap.add_argument("--K", type=int, default=20)
    ap.add_argument("--n-synth", type=int, default=10)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    args.out.mkdir(parents=True, exist_ok=True)

    reports = {}
    t0 = time.perf_counter()
    for seed in args.seeds:
        cfg = BenchmarkConfig.seeded(seed, K=args.K, n_synth=args.n_synth, sweep=tuple(args.sweep))
        reports[seed] = run_benchmark(cfg)
        print(f"seed {seed}: {reports[seed].n_queries} queries, "
              + ", ".join(f"{m} {v:.2f}" for m, v in reports[seed].mrr.items()), flush=True)
    elapsed = time.perf_counter() - t0

    with open(args.out / "methods.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "mrr_percent", "n_queries", "seed"])
        for seed, r in reports.items():
            for m in METHODS:
                w.writerow([m, f"{r.mrr[m]:.4f}", r.n_queries, seed])
    with open(args.out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "n_synth", "mrr_percent"])
        for seed, r in reports.items():
            for n, v in r.sweep:
                w.writerow([seed, n, f"{v:.4f}"])
    with open(args.out / "latency.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "n_synth", "query", "seconds"])
        for seed, r in reports.items():
            for n, samples in sorted(r.latency_samples.items()):
                for q, s in enumerate(samples):
                    w.writerow([seed, n, q, f"{s:.6f}"])

    print(f"\nmedian over {len(reports)} seeds (chance {chance_mrr(args.K):.2f}), {elapsed:.0f} s total")
    for m in METHODS:
        print(f"  {m:<20}{statistics.median(r.mrr[m] for r in reports.values()):8.2f}")
    for n in sorted(args.sweep):
        med = statistics.median(mrr(r.ranks[f"gcn_n{n}"]) for r in reports.values())
        print(f"  N={n:<18}{med:8.2f}")


if __name__ == "__main__":
    main()
