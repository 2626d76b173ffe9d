import json
import os

import pytest

from helpers import raw_scenario, to_toml

BASELINE = "scenarios/baseline.toml"


@pytest.fixture
def small(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(to_toml(raw_scenario(items=20, sites=4, horizon=5.0)))
    return p


def test_validate_ok_and_invalid(run_cli, tmp_path):
    code, out, _ = run_cli("validate", BASELINE)
    assert code == 0 and "ok" in out
    bad = tmp_path / "bad.toml"
    bad.write_text("name = 'x'\nhorizon_years = -1\n")
    code, _, err = run_cli("validate", bad)
    assert code == 1 and err.startswith("error: ")


def test_missing_file_is_a_validation_error(run_cli, tmp_path):
    code, _, err = run_cli("validate", tmp_path / "nope.toml")
    assert code == 1 and "error:" in err


def test_run_writes_outputs(run_cli, small, tmp_path):
    out = tmp_path / "out"
    code, _, _ = run_cli("run", small, "--seed", 7, "--out", out)
    assert code == 0
    assert sorted(os.listdir(out)) == ["incidents.log", "snapshots.csv", "summary.json"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 7 and len(summary["scenario_hash"]) == 64
    assert (out / "snapshots.csv").read_text().startswith("time,")


def test_unwritable_output_fails_before_running(run_cli, small, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = run_cli("run", small, "--out", blocker / "sub")
    assert code == 2 and "not writable" in err


def test_sweep_shape(run_cli, small, tmp_path):
    out = tmp_path / "sweep"
    code, table, _ = run_cli("sweep", small, "--axis", "strategy.replication.n=1,2,3,4", "--seeds", 2,
                             "--out", out, "--jobs", 1)
    assert code == 0
    points = sorted(p for p in os.listdir(out) if p.startswith("point-"))
    assert points == ["point-0", "point-1", "point-2", "point-3"]
    assert table.splitlines()[0].startswith("point,runs,")
    assert len(table.splitlines()) == 5
    doc = json.loads((out / "point-2" / "summary.json").read_text())
    assert doc["overrides"] == {"strategy.replication.n": 3} and [r["seed"] for r in doc["runs"]] == [0, 1]
    assert json.loads((out / "aggregate.json").read_text())["points"][0]["runs"] == 2


def test_sweep_bad_axis(run_cli, small, tmp_path):
    code, _, err = run_cli("sweep", small, "--axis", "nonsense", "--out", tmp_path / "o")
    assert code == 2 and "KEY=v1,v2" in err


def test_sweep_invalid_point_is_validation_error(run_cli, small, tmp_path):
    code, _, _ = run_cli("sweep", small, "--axis", "audit.landslide_fraction=0.5,1.5", "--out", tmp_path / "o")
    assert code == 1


@pytest.mark.parametrize("argv,needle", [
    (("full-read-error", "--preset", "barracuda"), "full_read_error_prob=0.0158727"),
    (("latent-errors", "--preset", "barracuda"), "expected_latent_errors=8.07875"),
    (("hazard", "--p", "0.07", "--years", "5"), "mttf_hours=603962.8"),
    (("loss", "--n", "2", "--lam", "0.1", "--t", "10"), "replica_loss_prob="),
    (("presets",), "475 MB/s"),
])
def test_calc_subcommands(run_cli, argv, needle):
    code, out, _ = run_cli("calc", *argv)
    assert code == 0 and needle in out


def test_calc_bad_input_is_runtime_failure(run_cli):
    code, _, err = run_cli("calc", "hazard", "--p", "1.5")
    assert code == 2 and err.startswith("error: ")


def test_report_to_file(run_cli, tmp_path):
    out = tmp_path / "report.md"
    code, _, _ = run_cli("report", BASELINE, "--out", out)
    assert code == 0 and out.read_text().startswith("# Disclosure report")
