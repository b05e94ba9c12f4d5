import json

import numpy as np
import pytest
import yaml

from passopt import cli
from passopt.scenario import load_preset


def write_scenario(tmp_path, **overrides):
    raw = load_preset("fig12_scattering").to_dict()
    raw["sim"]["t_end"] = 5.0
    raw["criteria"]["optimality_gap"] = None
    for k, v in overrides.items():
        raw[k].update(v)
    f = tmp_path / "scenario.yaml"
    f.write_text(yaml.safe_dump(raw))
    return f


def test_presets_list(capsys):
    assert cli.main(["presets", "list"]) == 0
    out = capsys.readouterr().out
    assert "fig11_naive_delay" in out and "loc_fig12_scattering" in out


def test_oracle_subcommand(capsys):
    assert cli.main(["oracle", "fig10_delayfree"]) == 0
    sol = json.loads(capsys.readouterr().out)
    np.testing.assert_allclose(sol["z_star"], [2.0, 2.2], atol=1e-12)
    assert len(sol["xi_star"]) == 5


def test_delay_free_preset_exit_zero(tmp_path):
    code = cli.main(["run", "fig10_delayfree", "--out", str(tmp_path), "--quiet"])
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["converged"] and summary["terminal"]["optimality_gap"] <= 1e-4
    assert all(d["passed"] for d in summary["dissipation"].values())
    header = (tmp_path / "telemetry.csv").read_text().splitlines()[0].split(",")
    assert {"consensus_error", "optimality_gap", "kkt_stationarity"} <= set(header)


def test_naive_delay_preset_exit_two(tmp_path):
    code = cli.main(["run", "fig11_naive_delay", "--out", str(tmp_path), "--quiet"])
    assert code == 2
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["diverged"] and summary["diverged_at"] < 100


def test_overrides_are_applied(tmp_path):
    f = write_scenario(tmp_path)
    assert cli.main(["run", str(f), "--out", str(tmp_path / "o"), "--seed", "9", "--h", "0.002", "--quiet"]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["scenario"]["sim"]["seed"] == 9
    assert summary["metadata"]["config"]["h"] == 0.002
    assert summary["metadata"]["steps"] == 2500


def test_unmet_criteria_exit_one(tmp_path):
    f = write_scenario(tmp_path, criteria={"optimality_gap": 1e-12})
    assert cli.main(["run", str(f), "--out", str(tmp_path / "o"), "--quiet"]) == 1


@pytest.mark.parametrize(
    "argv",
    [["run", "/no/such/file.yaml"], ["run", "fig10_delayfree", "--h", "-1"], ["oracle", "not_a_preset"]],
)
def test_errors_exit_one(argv, capsys):
    assert cli.main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_parse_grid():
    grid = cli.parse_grid("channel.eta=0.5,1,2; sim.seed=0:3")
    assert grid == [("channel.eta", [0.5, 1, 2]), ("sim.seed", [0, 1, 2])]
    assert cli.parse_grid("") == []
    with pytest.raises(ValueError):
        cli.parse_grid("channel.eta")


def test_empty_grid_runs_base_only(tmp_path):
    f = write_scenario(tmp_path)
    s = cli.parse_scenario(f)
    rows = cli.sweep(s, [], tmp_path / "sw", jobs=1)
    assert len(rows) == 1 and rows[0]["exit_code"] == 0
    assert (tmp_path / "sw" / "sweep.csv").exists()


def test_eta_sweep_on_scattering_preset(tmp_path):
    s = load_preset("fig12_scattering")
    rows = cli.sweep(s, cli.parse_grid("channel.eta=0.5,1,2"), tmp_path, jobs=3)
    assert [r["channel.eta"] for r in rows] == [0.5, 1, 2]
    assert all(r["converged"] for r in rows), rows


def test_seed_sweep_reports_divergence_count(tmp_path, capsys):
    argv = ["sweep", "fig11_naive_delay", "--grid", "sim.seed=0:10", "--out", str(tmp_path), "--jobs", "4"]
    assert cli.main(argv) == 0
    out = capsys.readouterr().out
    assert "cells diverged" in out
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(lines) == 11
