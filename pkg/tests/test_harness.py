import math
import os

import pytest

from cellfree_e2e import cli
from cellfree_e2e.harness import (
    TRIAL_COLUMNS,
    ExperimentSpec,
    emit_outputs,
    read_trials,
    run_experiment,
    savings,
)
from cellfree_e2e.scenario import ScenarioConfig

SMALL = ScenarioConfig(K=2, L=4, area_side=500.0)


def test_records_and_reproducibility(tmp_path):
    spec = ExperimentSpec(SMALL, trials=3, base_seed=5, algorithms=("e2e", "txmin"), out_dir=tmp_path / "a")
    records, summary = run_experiment(spec)
    assert sum(len(r.results) for r in records) == 6
    assert [r.seed for r in records] == [5, 6, 7]
    assert len(summary) == 2
    run_experiment(ExperimentSpec(SMALL, trials=3, base_seed=5, algorithms=("e2e", "txmin"), out_dir=tmp_path / "b"))
    for name in ("trials.csv", "summary.csv", "manifest.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_round_trip_and_manifest(tmp_path):
    spec = ExperimentSpec(SMALL, trials=2, algorithms=("e2e", "ap_shutdown", "txmin"), out_dir=tmp_path)
    records, summary = run_experiment(spec)
    rows = read_trials(tmp_path / "trials.csv")
    expected = [row for rec in records for row in rec.rows()]
    assert len(rows) == len(expected)
    for got, want in zip(rows, expected):
        assert list(got) == list(TRIAL_COLUMNS)
        for key in TRIAL_COLUMNS:
            if isinstance(want[key], float) and math.isnan(want[key]):
                assert math.isnan(got[key])
            else:
                assert got[key] == want[key]
        assert got["radio_power_w"] + got["cloud_power_w"] == pytest.approx(got["total_power_w"], rel=1e-9)
    manifest = (tmp_path / "manifest.txt").read_text().splitlines()
    assert "delta_tr=4.0 (assumed default)" in manifest
    assert "N_DFT=2048 (assumed default)" in manifest
    assert len((tmp_path / "summary.csv").read_text().splitlines()) == 1 + 3


def test_savings_definition():
    assert savings(50.0, 100.0) == pytest.approx(50.0)
    assert savings(84.0, 100.0) == pytest.approx(16.0)
    assert math.isnan(savings(1.0, 0.0))


def test_infeasible_trials_are_counted(tmp_path):
    cfg = SMALL.replace(sinr_targets=(1e9, 1e9))
    records, summary = run_experiment(ExperimentSpec(cfg, trials=2, algorithms=("e2e", "txmin")))
    assert all(res.status == "infeasible" for rec in records for res in rec.results.values())
    assert all(row["excluded"] == 2 and row["included"] == 0 for row in summary)
    assert all(math.isnan(row["mean_total_power_w"]) for row in summary)


def test_unwritable_output_fails_before_running(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        run_experiment(ExperimentSpec(SMALL, trials=1, out_dir=blocker / "out"))


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(SMALL, trials=0)
    with pytest.raises(ValueError):
        ExperimentSpec(SMALL, algorithms=())
    with pytest.raises(ValueError):
        ExperimentSpec(SMALL, algorithms=("nope",))


def test_emit_outputs_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_outputs([], [], ExperimentSpec(SMALL, trials=1, out_dir=tmp_path))


def _write_config(tmp_path, body):
    path = tmp_path / "cfg.toml"
    path.write_text(body)
    return str(path)


def test_cli(tmp_path, capsys):
    cfg = _write_config(tmp_path, "K = 2\nL = 4\narea_side = 500.0\n")
    assert cli.main(["validate", "--config", cfg]) == 0
    assert "ok" in capsys.readouterr().out
    assert cli.main(["group", "--config", cfg, "--seed", "1"]) == 0
    assert "group 0" in capsys.readouterr().out
    out = tmp_path / "run"
    code = cli.main(["run", "--config", cfg, "--trials", "1", "--seed", "3", "--algos", "e2e,txmin", "--out", str(out)])
    assert code == 0
    assert sorted(os.listdir(out)) == ["manifest.txt", "summary.csv", "timings.csv", "trials.csv"]
    bad = _write_config(tmp_path, "K = 2\nL = 4\ntau_p = 500\n")
    assert cli.main(["validate", "--config", bad]) == 1
