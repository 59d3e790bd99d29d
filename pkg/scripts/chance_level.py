"""Chance-level MRR: closed form against Monte-Carlo random rankings.

    python scripts/chance_level.py --K 20 100 --queries 10000 --reps 200
"""
import argparse

import numpy as np

from cvgl.evaluation import chance_mrr, mrr, true_rank


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, nargs="+", default=[20, 100])
    ap.add_argument("--queries", type=int, default=10_000)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    for K in args.K:
        runs = [mrr([true_rank(rng.permutation(K), int(rng.integers(K))) for _ in range(args.queries)])
                for _ in range(args.reps)]
        print(f"K={K:<4} closed form {chance_mrr(K):7.3f}   simulated mean {np.mean(runs):7.3f}"
              f"  sd {np.std(runs):.3f}  ({args.reps} x {args.queries} queries)")


if __name__ == "__main__":
    main()
