#!/usr/bin/env python3
"""Reproduce the full benchmark summary table for the three-point linear
model: per grid size this trains the quantization grids, solves the
backward recursion, rolls out the stopping rule and reports both error
bounds.

The defaults run all eleven grid sizes and take a few hours on one core,
dominated by nearest-neighbour searches for the largest grids. Cut the
size list or the path budgets down for a faster pass, e.g.

    python3 scripts/reproduce_benchmark.py --sizes 50,300,1000 \
        --train-paths 100000 --eval-paths 200000 --out runs/quick

Training-sample budgets matter at the large end: with fewer than about
50 samples per grid point the empirical transition weights get noisy,
which biases the value approximation upward and degrades the rolled-out
rule. The default budget keeps the published-scale sizes stable up to a
few thousand points; push --train-paths up if the largest grids drift.
"""

import argparse
import sys
import time
import warnings

from pdmpstop import cli

FULL_SIZES = (50, 100, 300, 500, 1000, 2000, 4000, 6000, 8000, 10000, 12000)


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default=",".join(str(s) for s in FULL_SIZES),
                    help="comma-separated quantization grid sizes")
    ap.add_argument("--seed", type=int, default=20260814)
    ap.add_argument("--train-paths", type=int, default=400_000)
    ap.add_argument("--error-paths", type=int, default=100_000)
    ap.add_argument("--eval-paths", type=int, default=1_000_000)
    ap.add_argument("--sup-paths", type=int, default=1_000_000)
    ap.add_argument("--out", default="runs/benchmark")
    ap.add_argument("--threads", type=int, default=None)
    return ap.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    sizes = cli._parse_sizes(args.sizes)
    if args.train_paths < 10 * max(sizes):
        sys.exit(f"--train-paths must be at least 10x the largest grid "
                 f"size ({10 * max(sizes)})")
    cli._set_threads(args.threads)
    cfg = cli.PipelineConfig(
        points=(0.0, 0.25, 0.5), a=3.0, v=1.0, sigma2=0.25, horizon=9,
        initial_point=0.0, grid_sizes=sizes, seed=args.seed,
        train_paths=args.train_paths, error_paths=args.error_paths,
        eval_paths=args.eval_paths, sup_paths=args.sup_paths,
        out_dir=args.out)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        # the largest grids routinely drop a handful of never-hit cells
        warnings.simplefilter("ignore", UserWarning)
        cli.cmd_pipeline(cfg)
    print(f"total {time.perf_counter() - t0:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
