#!/usr/bin/env python3
"""Decay of the measured quantization errors with grid size, and the time
step and a priori value bound they induce. Useful for picking the size
and budget before a long pipeline run.

    python3 scripts/quantizer_convergence.py --sizes 50,200,800 --paths 50000
"""

import argparse
import sys
import warnings

import numpy as np

import pdmpstop as p
from pdmpstop import cli


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="50,200,800")
    ap.add_argument("--paths", type=int, default=50_000,
                    help="training paths; held-out error paths match")
    ap.add_argument("--seed", type=int, default=20260814)
    args = ap.parse_args(argv)
    sizes = cli._parse_sizes(args.sizes)

    model = p.example_model()
    print(f"{'size':>6}  {'max pi err':>10}  {'max s err':>9}  "
          f"{'delta':>7}  {'B_th':>8}")
    for size in sizes:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            stages = p.clvq_train(
                model, [size], args.paths,
                p.rng_stream(args.seed, "quantizer", 2 * size),
                noise_rng=p.rng_stream(args.seed, "quantizer", 2 * size + 1))
        errs = p.quant_errors(
            stages, model, args.paths,
            p.rng_stream(args.seed, "simulation", 2 * size),
            noise_rng=p.rng_stream(args.seed, "noise", 2 * size))
        pi_err = max(e.pi for e in errs)
        s_err = max(e.s for e in errs)
        try:
            grid = p.build_time_grid(model, [e.s for e in errs[1:]])
            inputs = p.bound_inputs(model, [e.pi for e in errs],
                                    [e.s for e in errs], grid.delta)
            delta, b_th = grid.delta, p.theoretical_bound(inputs)
            print(f"{size:>6}  {pi_err:>10.5f}  {s_err:>9.5f}  "
                  f"{delta:>7.4f}  {b_th:>8.1f}")
        except p.DeltaInfeasibleError:
            print(f"{size:>6}  {pi_err:>10.5f}  {s_err:>9.5f}  "
                  f"{'-':>7}  {'infeasible':>8}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
