"""Config-driven command line: simulate observed chains, train quantization
grids, solve the backward recursion, evaluate the stopping rule, and
assemble a per-grid-size summary report.

All artifacts are plain text: CSV for path batches, evaluations and the
report, JSON for grids and policy tables.  Floats are written with repr so
files round-trip bit-exactly and reruns with the same seed are
byte-identical apart from wall times.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .bounds import (BoundInputs, DeltaConditionError, bound_inputs,
                     empirical_bound, policy_bound, theoretical_bound)
from .dp import (DeltaInfeasibleError, ValuePolicyTable, backward_recursion,
                 build_time_grid, load_table, save_table)
from .filter import DegenerateLikelihoodError, filter_paths
from .model import (ModelValidationError, PdmpModel, RootBracketError,
                    linear_flow_model, rng_stream, simulate_paths,
                    trajectory_value_sups)
from .quantize import (QuantizerConfigError, clvq_train, load_stages,
                       quant_errors, save_stages)
from .stop import evaluate_policy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DELTA = 3
EXIT_NUMERIC = 4

SUP_CHUNK = 1 << 17
DEFAULT_SIM_PATHS = 10_000


class ConfigError(ValueError):
    """Missing, unknown or ill-typed configuration key."""


@dataclass(frozen=True)
class PipelineConfig:
    """Run parameters; the model block plus grid sizes and budgets."""

    points: tuple
    a: float
    v: float
    sigma2: float
    horizon: int
    initial_point: float
    grid_sizes: tuple
    seed: int
    train_paths: int = 100_000
    error_paths: int = 100_000
    eval_paths: int = 1_000_000
    sup_paths: int = 1_000_000
    safety: float = 0.05
    p: int = 2
    out_dir: str = "runs"


_REQUIRED = ("points", "a", "v", "sigma2", "horizon", "initial_point",
             "grid_sizes", "seed")


def config_from_mapping(raw: dict) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    known = {f.name for f in fields(PipelineConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config key: {key!r}")
    for key in _REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required config key: {key!r}")
    vals = dict(raw)
    try:
        vals["points"] = tuple(float(x) for x in raw["points"])
        sizes = raw["grid_sizes"]
        if isinstance(sizes, (int, float)):
            sizes = [sizes]
        vals["grid_sizes"] = tuple(int(s) for s in sizes)
        for key in ("a", "v", "sigma2", "initial_point", "safety"):
            if key in vals:
                vals[key] = float(vals[key])
        for key in ("horizon", "seed", "train_paths", "error_paths",
                    "eval_paths", "sup_paths", "p"):
            if key in vals:
                vals[key] = int(vals[key])
        if "out_dir" in vals:
            vals["out_dir"] = str(vals["out_dir"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"ill-typed config value: {exc}") from exc
    return PipelineConfig(**vals)


def load_config(path) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_mapping(raw or {})


def config_model(cfg: PipelineConfig) -> PdmpModel:
    return linear_flow_model(points=cfg.points, a=cfg.a, v=cfg.v,
                             sigma2=cfg.sigma2, horizon=cfg.horizon,
                             initial_point=cfg.initial_point)


# ---------------------------------------------------------------------------
# report


@dataclass
class ReportRow:
    """One grid size of the summary report."""

    grid_size: int
    delta: float
    vhat_0: float
    vbar_0: float
    vbar_stderr: float
    sup_estimate: float
    sup_stderr: float
    b_em: float
    b_th: float
    policy_b_th: float
    max_pi_error: float
    max_s_error: float
    seed: int
    wall_time_s: float


@dataclass
class RunReport:
    """Per-grid-size rows; B_em of each row recomputes from its own fields."""

    rows: list

    def row_for(self, grid_size: int) -> ReportRow:
        for row in self.rows:
            if row.grid_size == grid_size:
                return row
        raise KeyError(f"no report row for grid size {grid_size}")


# wall time last so replay comparisons can drop one trailing column
REPORT_COLUMNS = ("grid_size", "delta", "vhat_0", "vbar_0", "vbar_stderr",
                  "sup_estimate", "sup_stderr", "b_em", "b_th",
                  "policy_b_th", "max_pi_error", "max_s_error", "seed",
                  "wall_time_s")
_INT_COLUMNS = {"grid_size", "seed"}


def report_to_csv_text(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in report.rows:
        writer.writerow([
            str(getattr(row, col)) if col in _INT_COLUMNS
            else repr(float(getattr(row, col)))
            for col in REPORT_COLUMNS
        ])
    return buf.getvalue()


def report_from_csv_text(text: str) -> RunReport:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != REPORT_COLUMNS:
        raise ValueError(f"unexpected report header: {header}")
    rows = []
    for rec in reader:
        kwargs = {
            col: (int(val) if col in _INT_COLUMNS else float(val))
            for col, val in zip(REPORT_COLUMNS, rec)
        }
        rows.append(ReportRow(**kwargs))
    return RunReport(rows=rows)


def save_report(report: RunReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report_to_csv_text(report))


def load_report(path) -> RunReport:
    with open(path, "r", encoding="utf-8") as fh:
        return report_from_csv_text(fh.read())


def format_report_table(report: RunReport) -> str:
    """Fixed-width human-readable view of the report."""
    heads = ("points", "delta", "Vhat_0", "Vbar_0", "B_em", "B_th",
             "policy_B_th", "pi_err", "s_err", "sup")
    lines = ["  ".join(f"{h:>11}" for h in heads)]
    for r in report.rows:
        cells = (f"{r.grid_size:d}", f"{r.delta:.4f}", f"{r.vhat_0:.4f}",
                 f"{r.vbar_0:.4f}", f"{r.b_em:.3f}", f"{r.b_th:.1f}",
                 f"{r.policy_b_th:.1f}", f"{r.max_pi_error:.4f}",
                 f"{r.max_s_error:.4f}", f"{r.sup_estimate:.4f}")
        lines.append("  ".join(f"{c:>11}" for c in cells))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# artifact paths and seed streams


def _out_dir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def stage_file(cfg: PipelineConfig, size: int) -> Path:
    return _out_dir(cfg) / f"stages_{size}.json"


def table_file(cfg: PipelineConfig, size: int) -> Path:
    return _out_dir(cfg) / f"table_{size}.json"


def report_file(cfg: PipelineConfig) -> Path:
    return _out_dir(cfg) / "report.csv"


def _train_rngs(cfg: PipelineConfig, size: int):
    return (rng_stream(cfg.seed, "quantizer", 2 * size),
            rng_stream(cfg.seed, "quantizer", 2 * size + 1))


def _error_rngs(cfg: PipelineConfig, size: int):
    # indices 2*size >= 2 stay clear of the simulate (0) and sup (1) streams
    return (rng_stream(cfg.seed, "simulation", 2 * size),
            rng_stream(cfg.seed, "noise", 2 * size))


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: PipelineConfig, n_paths: Optional[int] = None) -> Path:
    """Simulate chains with observations, write chain and filter CSVs."""
    model = config_model(cfg)
    n = DEFAULT_SIM_PATHS if n_paths is None else n_paths
    rng = rng_stream(cfg.seed, "simulation", 0)
    noise = rng_stream(cfg.seed, "noise", 0)
    batch = simulate_paths(model, n, rng, noise)
    out = _out_dir(cfg)

    chains = out / "chains.csv"
    with open(chains, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("path", "n", "z", "s", "y", "boundary"))
        for i in range(n):
            for k in range(model.horizon + 1):
                writer.writerow((i, k, int(batch.z[i, k]),
                                 repr(float(batch.s[i, k])),
                                 repr(float(batch.y[i, k])),
                                 int(batch.boundary[i, k])))

    filters = out / "filters.csv"
    with open(filters, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("path", "n") + tuple(f"pi_{j + 1}" for j in range(model.q)))
        if n > 0:
            pis = filter_paths(model, batch=batch)
            for i in range(n):
                for k in range(model.horizon + 1):
                    writer.writerow((i, k) + tuple(repr(float(v)) for v in pis[i, k]))

    if n > 0:
        s1 = batch.s[:, 1]
        print(f"simulated {n} paths over {model.horizon} jumps -> {chains}")
        print(f"first inter-jump time: mean {s1.mean():.6f}, "
              f"std {s1.std(ddof=1):.6f}, "
              f"boundary fraction {batch.boundary[:, 1].mean():.4f}")
    else:
        print(f"simulated 0 paths -> {chains}")
    return chains


def _train_one(cfg: PipelineConfig, model: PdmpModel, size: int):
    """Train grids for one size and measure held-out errors."""
    rng, noise = _train_rngs(cfg, size)
    stages = clvq_train(model, [size], cfg.train_paths, rng, noise_rng=noise)
    err_rng, err_noise = _error_rngs(cfg, size)
    errs = quant_errors(stages, model, cfg.error_paths, err_rng, p=cfg.p,
                        noise_rng=err_noise)
    return stages, errs


def cmd_train(cfg: PipelineConfig, sizes: Optional[Sequence[int]] = None) -> list:
    """Train and persist quantization grids for each size."""
    model = config_model(cfg)
    paths = []
    for size in sizes or cfg.grid_sizes:
        stages, errs = _train_one(cfg, model, size)
        path = stage_file(cfg, size)
        save_stages(stages, path)
        paths.append(path)
        print(f"size {size}: {sum(st.n_points for st in stages)} grid points, "
              f"max pi error {max(e.pi for e in errs):.5f}, "
              f"max s error {max(e.s for e in errs):.5f} -> {path}")
    return paths


def cmd_solve(cfg: PipelineConfig, sizes: Optional[Sequence[int]] = None) -> list:
    """Build time grids and run the backward recursion per trained size."""
    model = config_model(cfg)
    paths = []
    for size in sizes or cfg.grid_sizes:
        sfile = stage_file(cfg, size)
        if not sfile.exists():
            raise ConfigError(f"no trained grids at {sfile}; run train first")
        stages = load_stages(sfile)
        err_rng, err_noise = _error_rngs(cfg, size)
        errs = quant_errors(stages, model, cfg.error_paths, err_rng, p=cfg.p,
                            noise_rng=err_noise)
        grid = build_time_grid(model, [e.s for e in errs[1:]], safety=cfg.safety)
        table = backward_recursion(stages, model, grid)
        path = table_file(cfg, size)
        save_table(table, path)
        paths.append(path)
        print(f"size {size}: delta {grid.delta:.5f}, "
              f"value {table.value_at_start():.6f} -> {path}")
    return paths


def cmd_evaluate(cfg: PipelineConfig, sizes: Optional[Sequence[int]] = None,
                 n_paths: Optional[int] = None) -> list:
    """Roll out the stopping rule against fresh paths per solved size."""
    model = config_model(cfg)
    n = cfg.eval_paths if n_paths is None else n_paths
    out = []
    for size in sizes or cfg.grid_sizes:
        sfile, tfile = stage_file(cfg, size), table_file(cfg, size)
        if not sfile.exists() or not tfile.exists():
            raise ConfigError(f"missing artifacts for size {size}; "
                              f"run train and solve first")
        stages = load_stages(sfile)
        table = load_table(tfile)
        mean, stderr = evaluate_policy(model, table, stages, n, seed=cfg.seed)
        path = _out_dir(cfg) / f"eval_{size}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("n_paths", "mean", "std_error", "seed"))
            writer.writerow((n, repr(mean), repr(stderr), cfg.seed))
        out.append(path)
        print(f"size {size}: mean reward {mean:.6f} "
              f"(std error {stderr:.6f}, {n} paths) -> {path}")
    return out


def estimate_sup_reward(cfg: PipelineConfig, model: PdmpModel) -> tuple[float, float]:
    """Monte Carlo mean of the running supremum of the reward up to the
    final jump, with standard error; an upper bound for the value."""
    rng = rng_stream(cfg.seed, "simulation", 1)
    noise = rng_stream(cfg.seed, "noise", 1)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < cfg.sup_paths:
        m = min(SUP_CHUNK, cfg.sup_paths - done)
        batch = simulate_paths(model, m, rng, noise)
        sups = trajectory_value_sups(model, batch)
        total += float(sups.sum())
        total_sq += float((sups ** 2).sum())
        done += m
    mean = total / cfg.sup_paths
    var = max((total_sq - cfg.sup_paths * mean * mean) / max(cfg.sup_paths - 1, 1), 0.0)
    return mean, math.sqrt(var / cfg.sup_paths)


def cmd_pipeline(cfg: PipelineConfig) -> RunReport:
    """Full run: per grid size train, measure, solve, evaluate, bound.

    The report CSV is rewritten after every completed size so partial
    results survive an abort on a later size.
    """
    model = config_model(cfg)
    sup_mean, sup_se = estimate_sup_reward(cfg, model)
    print(f"sup-reward estimate {sup_mean:.6f} (std error {sup_se:.6f}, "
          f"{cfg.sup_paths} paths)")
    report = RunReport(rows=[])
    rfile = report_file(cfg)
    for size in cfg.grid_sizes:
        t0 = time.perf_counter()
        stages, errs = _train_one(cfg, model, size)
        save_stages(stages, stage_file(cfg, size))
        grid = build_time_grid(model, [e.s for e in errs[1:]], safety=cfg.safety)
        table = backward_recursion(stages, model, grid)
        save_table(table, table_file(cfg, size))
        vhat0 = table.value_at_start()
        vbar0, vbar_se = evaluate_policy(model, table, stages, cfg.eval_paths,
                                         seed=cfg.seed)
        inputs = bound_inputs(model, [e.pi for e in errs], [e.s for e in errs],
                              grid.delta)
        b_th = theoretical_bound(inputs)
        p_th = policy_bound(inputs)
        b_em = empirical_bound(vbar0, vhat0, sup_mean)
        row = ReportRow(
            grid_size=size, delta=grid.delta, vhat_0=vhat0, vbar_0=vbar0,
            vbar_stderr=vbar_se, sup_estimate=sup_mean, sup_stderr=sup_se,
            b_em=b_em, b_th=b_th, policy_b_th=p_th,
            max_pi_error=max(e.pi for e in errs),
            max_s_error=max(e.s for e in errs),
            seed=cfg.seed, wall_time_s=time.perf_counter() - t0,
        )
        report.rows.append(row)
        save_report(report, rfile)
        print(f"size {size}: Vhat_0 {vhat0:.4f}, Vbar_0 {vbar0:.4f}, "
              f"B_em {b_em:.3f}, B_th {b_th:.1f} "
              f"({row.wall_time_s:.1f}s)")
    print(format_report_table(report))
    print(f"report -> {rfile}")
    return report


def cmd_report(cfg: PipelineConfig) -> RunReport:
    """Pretty-print a previously computed report."""
    rfile = report_file(cfg)
    if not rfile.exists():
        raise ConfigError(f"no report at {rfile}; run pipeline first")
    report = load_report(rfile)
    print(format_report_table(report))
    return report


# ---------------------------------------------------------------------------
# argument parsing and dispatch


def _set_threads(n: Optional[int]) -> None:
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(n)
    except ImportError:
        pass


def _parse_sizes(text: str) -> tuple:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"bad --grid-sizes value {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdmpstop",
        description="optimal stopping of a partially observed piecewise-"
                    "deterministic process via quantized dynamic programming")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML config file")
    common.add_argument("--seed", type=int, default=None, help="override seed")
    common.add_argument("--out", default=None, help="override output directory")
    common.add_argument("--grid-sizes", default=None,
                        help="comma-separated grid sizes override")
    common.add_argument("--paths", type=int, default=None,
                        help="path-count override for the subcommand")
    common.add_argument("--threads", type=int, default=None,
                        help="cap threads used by the linear algebra backend")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("simulate", "write a CSV batch of chain and filter paths"),
            ("train", "train and persist the quantization grids"),
            ("solve", "run the backward recursion on trained grids"),
            ("evaluate", "roll out the stopping rule on fresh paths"),
            ("pipeline", "train, solve, evaluate and report in one run"),
            ("report", "pretty-print a previously computed report")):
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if args.grid_sizes is not None:
        cfg = replace(cfg, grid_sizes=_parse_sizes(args.grid_sizes))
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "simulate":
            cmd_simulate(cfg, n_paths=args.paths)
        elif args.command == "train":
            if args.paths is not None:
                cfg = replace(cfg, train_paths=args.paths)
            cmd_train(cfg)
        elif args.command == "solve":
            cmd_solve(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, n_paths=args.paths)
        elif args.command == "pipeline":
            if args.paths is not None:
                cfg = replace(cfg, eval_paths=args.paths)
            cmd_pipeline(cfg)
        elif args.command == "report":
            cmd_report(cfg)
    except (ConfigError, ModelValidationError, QuantizerConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DeltaInfeasibleError, DeltaConditionError) as exc:
        print(f"time-step infeasible: {exc}", file=sys.stderr)
        return EXIT_DELTA
    except (DegenerateLikelihoodError, RootBracketError, ArithmeticError,
            ValueError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
