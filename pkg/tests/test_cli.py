"""Command line behavior: exit codes, diagnostics, and the tune/report pipeline."""

import json
import subprocess
import sys

import pytest

from clkit.cli import main
from clkit.harness import read_index


def _write_config(tmp_path, method="finetune", builtin="iris", grid=None, train=None):
    cfg = {
        "sequence": {"builtin": builtin, "classes_per_task": 1},
        "method": {"name": method},
        "train": train or {"epochs": 3, "batch_size": 16, "base_lr": 0.1},
        "seed": 0,
        "out_dir": str(tmp_path / "results"),
    }
    if grid:
        cfg["method"]["grid"] = grid
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestExitCodes:
    def test_missing_config_file(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "missing.cfg")])
        assert code != 0
        assert "not found" in capsys.readouterr().err

    def test_unknown_subcommand_prints_usage(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag_prints_usage(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["run", "--bogus", "x"])
        assert info.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_invalid_config_reports_error(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"method": {"name": "joint"}, "nonsense": True}))
        code = main(["run", "--config", str(path)])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_run_succeeds_on_tiny_config(self, tmp_path, capsys):
        path = _write_config(tmp_path)
        assert main(["run", "--config", str(path)]) == 0
        out = capsys.readouterr().out
        assert "test FAA" in out

    def test_console_entry_point(self, tmp_path):
        # one subprocess check that the installed script wires up argparse
        proc = subprocess.run(
            [sys.executable, "-m", "clkit.cli", "report", "--dir", str(tmp_path / "nope")],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 1
        assert "not found" in proc.stderr


class TestViz:
    def test_viz_rejects_wide_sequences(self, tmp_path, capsys):
        path = _write_config(tmp_path, builtin="wine")
        code = main(["viz", "--config", str(path), "--grid-out", str(tmp_path / "g.csv")])
        assert code == 1
        assert "2-feature" in capsys.readouterr().err

    def test_viz_writes_grid_for_2d_sequence(self, tmp_path, capsys):
        path = _write_config(tmp_path, builtin="iris2d")
        grid_path = tmp_path / "grid.csv"
        code = main(
            ["viz", "--config", str(path), "--grid-out", str(grid_path), "--resolution", "20"]
        )
        assert code == 0
        lines = grid_path.read_text().strip().split("\n")
        assert lines[0] == "x,y,p1,p2,p3"
        assert len(lines) == 401


class TestTuneReportPipeline:
    def test_tune_then_report_are_consistent(self, tmp_path, capsys):
        path = _write_config(tmp_path, method="ewc", grid={"lam": [1.0, 100.0]})
        assert main(["tune", "--config", str(path)]) == 0
        tune_out = capsys.readouterr().out
        assert "cells=2" in tune_out

        assert main(["report", "--dir", str(tmp_path / "results")]) == 0
        report_out = capsys.readouterr().out
        assert "ewc" in report_out

        # the reported best matches the persisted winner summary
        best = json.loads((tmp_path / "results" / "best_ewc_s0.json").read_text())
        assert f"{100 * best['best_test_faa']:.4f}" in report_out

    def test_seed_override_changes_persisted_rows(self, tmp_path):
        path = _write_config(tmp_path)
        assert main(["run", "--config", str(path), "--seed", "3"]) == 0
        rows = read_index(str(tmp_path / "results"))
        assert rows[0]["seed"] == "3"
