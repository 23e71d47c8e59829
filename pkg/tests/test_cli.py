"""Config handling, artifact layout, exit codes, and replay determinism of
the command line."""

import csv
import os
from pathlib import Path

import numpy as np
import pytest
import yaml

import pdmpstop as p
from pdmpstop import cli
from pdmpstop.cli import (REPORT_COLUMNS, ConfigError, PipelineConfig,
                          RunReport, _apply_overrides, _parse_sizes,
                          config_from_mapping, main)

SMOKE = dict(points=[0.0, 0.25, 0.5], a=3.0, v=1.0, sigma2=0.25, horizon=9,
             initial_point=0.0, grid_sizes=[24], seed=99, train_paths=4000,
             error_paths=4000, eval_paths=2000, sup_paths=2000)


def write_cfg(tmp_path, name="cfg.yaml", **overrides):
    raw = dict(SMOKE)
    raw.setdefault("out_dir", str(tmp_path / "out"))
    raw.update(overrides)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return path, raw


def read_csv_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# configuration


def test_config_coercions_and_defaults():
    cfg = config_from_mapping(dict(SMOKE, grid_sizes=24, a="3", seed="7"))
    assert cfg.points == (0.0, 0.25, 0.5)
    assert cfg.grid_sizes == (24,)
    assert cfg.a == 3.0 and isinstance(cfg.a, float)
    assert cfg.seed == 7 and isinstance(cfg.seed, int)
    assert cfg.safety == 0.05 and cfg.p == 2 and cfg.out_dir == "runs"


def test_config_rejects_unknown_and_missing_keys():
    with pytest.raises(ConfigError, match="unknown config key: 'pointz'"):
        config_from_mapping(dict(SMOKE, pointz=[0.0]))
    short = dict(SMOKE)
    del short["seed"]
    with pytest.raises(ConfigError, match="missing required config key: 'seed'"):
        config_from_mapping(short)
    with pytest.raises(ConfigError, match="must be a mapping"):
        config_from_mapping([1, 2])


def test_config_rejects_ill_typed_values():
    with pytest.raises(ConfigError, match="ill-typed"):
        config_from_mapping(dict(SMOKE, points="abc"))
    with pytest.raises(ConfigError, match="ill-typed"):
        config_from_mapping(dict(SMOKE, horizon="nine"))


def test_load_config_reports_parse_and_read_failures(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("points: [0.0, 0.25", encoding="utf-8")
    with pytest.raises(ConfigError, match="cannot parse"):
        cli.load_config(bad)
    with pytest.raises(ConfigError, match="cannot read"):
        cli.load_config(tmp_path / "absent.yaml")


def test_parse_sizes():
    assert _parse_sizes("50,300") == (50, 300)
    assert _parse_sizes("50,") == (50,)
    with pytest.raises(ConfigError, match="bad --grid-sizes"):
        _parse_sizes("50,x")


def test_cli_overrides_replace_config_fields(tmp_path):
    path, _ = write_cfg(tmp_path)
    args = cli.build_parser().parse_args(
        ["train", "--config", str(path), "--seed", "5", "--out", "elsewhere",
         "--grid-sizes", "8,16"])
    cfg = _apply_overrides(cli.load_config(args.config), args)
    assert cfg.seed == 5
    assert cfg.out_dir == "elsewhere"
    assert cfg.grid_sizes == (8, 16)


def test_report_csv_round_trip_and_lookup():
    row = cli.ReportRow(grid_size=50, delta=0.1, vhat_0=0.81, vbar_0=0.79,
                        vbar_stderr=4e-4, sup_estimate=0.99, sup_stderr=1e-4,
                        b_em=0.18, b_th=683.0, policy_b_th=1e4,
                        max_pi_error=0.2, max_s_error=0.05, seed=1,
                        wall_time_s=12.5)
    report = RunReport(rows=[row])
    back = cli.report_from_csv_text(cli.report_to_csv_text(report))
    assert back.rows[0] == row
    assert back.row_for(50) == row
    with pytest.raises(KeyError):
        back.row_for(999)
    assert REPORT_COLUMNS[-1] == "wall_time_s"
    text = cli.format_report_table(report)
    assert "Vhat_0" in text and "50" in text
    assert len(text.splitlines()) == 2


# ---------------------------------------------------------------------------
# exit codes


def test_exit_code_for_broken_config(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("points: [0.0, 0.25, 0.5]\n", encoding="utf-8")
    assert main(["train", "--config", str(path)]) == cli.EXIT_CONFIG


def test_exit_code_for_missing_artifacts(tmp_path):
    path, _ = write_cfg(tmp_path)
    assert main(["solve", "--config", str(path)]) == cli.EXIT_CONFIG
    assert main(["report", "--config", str(path)]) == cli.EXIT_CONFIG


def test_exit_code_for_infeasible_time_step(tmp_path):
    # a single-cell grid leaves time errors too large for any admissible step
    path, _ = write_cfg(tmp_path, grid_sizes=[1])
    assert main(["pipeline", "--config", str(path)]) == cli.EXIT_DELTA


# ---------------------------------------------------------------------------
# simulate artifacts


def test_simulate_writes_deterministic_consistent_csvs(tmp_path):
    path, raw = write_cfg(tmp_path)
    cfg = cli.load_config(path)
    chains = cli.cmd_simulate(cfg, n_paths=400)
    first = chains.read_bytes()
    filters_first = (chains.parent / "filters.csv").read_bytes()
    cli.cmd_simulate(cfg, n_paths=400)
    assert chains.read_bytes() == first
    assert (chains.parent / "filters.csv").read_bytes() == filters_first

    model = cli.config_model(cfg)
    rows = read_csv_rows(chains)
    assert len(rows) == 400 * (model.horizon + 1)
    for rec in rows:
        assert int(rec["z"]) in range(model.q)
        if int(rec["n"]) > 0 and rec["boundary"] == "1":
            assert float(rec["s"]) in model.exit_times
    pis = read_csv_rows(chains.parent / "filters.csv")
    assert len(pis) == 400 * (model.horizon + 1)
    sums = [sum(float(rec[f"pi_{j + 1}"]) for j in range(model.q)) for rec in pis]
    assert np.allclose(sums, 1.0, atol=1e-9)


# ---------------------------------------------------------------------------
# pipeline, resume, replay


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("smoke")
    path, raw = write_cfg(tmp)
    assert main(["pipeline", "--config", str(path)]) == cli.EXIT_OK
    return path, cli.load_config(path)


def test_pipeline_writes_coherent_report(smoke_run):
    _, cfg = smoke_run
    assert cli.stage_file(cfg, 24).exists()
    assert cli.table_file(cfg, 24).exists()
    report = cli.load_report(cli.report_file(cfg))
    row = report.row_for(24)
    assert row.seed == cfg.seed
    assert row.b_em == pytest.approx(
        p.empirical_bound(row.vbar_0, row.vhat_0, row.sup_estimate), abs=1e-15)
    assert 0.5 < row.vhat_0 < 1.3
    assert 0.5 < row.vbar_0 < 1.0
    assert row.vbar_0 < row.vhat_0 + row.b_th
    assert row.b_th > 0 and row.policy_b_th > row.b_th
    assert 0 < row.delta < 0.125
    assert row.max_pi_error > 0 and row.max_s_error > 0
    table = cli.load_table(cli.table_file(cfg, 24))
    assert table.value_at_start() == row.vhat_0


def test_pipeline_replay_is_byte_identical_apart_from_wall_time(smoke_run, tmp_path):
    path1, cfg1 = smoke_run
    path2, _ = write_cfg(tmp_path, name="replay.yaml",
                         out_dir=str(tmp_path / "out2"))
    assert main(["pipeline", "--config", str(path2)]) == cli.EXIT_OK
    cfg2 = cli.load_config(path2)

    def sans_wall(cfg):
        lines = cli.report_file(cfg).read_text(encoding="utf-8").splitlines()
        return [line.rsplit(",", 1)[0] for line in lines]

    assert sans_wall(cfg1) == sans_wall(cfg2)
    assert (cli.stage_file(cfg1, 24).read_bytes()
            == cli.stage_file(cfg2, 24).read_bytes())
    assert (cli.table_file(cfg1, 24).read_bytes()
            == cli.table_file(cfg2, 24).read_bytes())


def test_staged_commands_reproduce_the_pipeline_row(smoke_run, tmp_path):
    path1, cfg1 = smoke_run
    row = cli.load_report(cli.report_file(cfg1)).row_for(24)
    path3, _ = write_cfg(tmp_path, name="staged.yaml",
                         out_dir=str(tmp_path / "out3"))
    assert main(["train", "--config", str(path3)]) == cli.EXIT_OK
    assert main(["solve", "--config", str(path3)]) == cli.EXIT_OK
    assert main(["evaluate", "--config", str(path3)]) == cli.EXIT_OK
    cfg3 = cli.load_config(path3)
    assert (cli.table_file(cfg3, 24).read_bytes()
            == cli.table_file(cfg1, 24).read_bytes())
    eval_row = read_csv_rows(Path(cfg3.out_dir) / "eval_24.csv")[0]
    assert float(eval_row["mean"]) == row.vbar_0
    assert int(eval_row["n_paths"]) == cfg3.eval_paths


def test_evaluate_rejects_zero_paths_with_numeric_exit(smoke_run):
    path, _ = smoke_run
    assert main(["evaluate", "--config", str(path), "--paths", "0"]) == cli.EXIT_NUMERIC


def test_report_command_prints_the_table(smoke_run, capsys):
    path, _ = smoke_run
    assert main(["report", "--config", str(path)]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "Vhat_0" in out and "B_th" in out
    assert "24" in out


def test_thread_cap_sets_environment():
    saved = {k: os.environ.get(k) for k in
             ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")}
    try:
        cli._set_threads(2)
        assert os.environ["OMP_NUM_THREADS"] == "2"
        assert os.environ["OPENBLAS_NUM_THREADS"] == "2"
    finally:
        for k, v in saved.items():
            if v is None:
                os.environ.pop(k, None)
            else:
                os.environ[k] = v
