"""Tests for the command-line interface."""

import json
import os

import numpy as np
import pytest

from fracpinn.cli import _parse_config_file, main
from fracpinn.metrics import Report


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestUsage:
    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc_info:
            main(["frobnicate"])
        assert exc_info.value.code == 2

    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc_info:
            main(["soe-check", "--frobnicate"])
        assert exc_info.value.code == 2

    def test_unknown_problem_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc_info:
            main(["march", "heat"])
        assert exc_info.value.code == 2


class TestSoeCheck:
    def test_certificate_emitted(self, capsys):
        code, out, _ = run_cli(capsys, "soe-check", "--alpha", "0.5", "--eps-soe", "1e-8")
        assert code == 0
        cert = json.loads(out)
        assert cert["measured_max_error"] <= 1e-8
        assert cert["Nq"] <= 256

    def test_infeasible_tolerance_exits_1_with_error_json(self, capsys):
        code, _, err = run_cli(
            capsys, "soe-check", "--alpha", "0.3", "--eps-soe", "1e-13", "--dt-cutoff", "1e-10"
        )
        assert code == 1
        payload = json.loads(err)
        assert "measured_error" in payload


class TestKernelCheck:
    def test_predicates_pass(self, capsys):
        code, out, _ = run_cli(capsys, "kernel-check", "--alpha", "0.9", "--levels", "64")
        assert code == 0
        result = json.loads(out)
        assert result["ok"] is True


class TestConverge:
    def test_direct_scheme_report(self, capsys):
        code, out, _ = run_cli(
            capsys, "converge", "ntfsde1d", "--alpha", "0.5", "--method", "direct-scheme",
            "--gamma", "2/alpha", "--levels", "8,16,32",
        )
        assert code == 0
        report = json.loads(out)
        assert report["levels"] == [8, 16, 32]
        assert len(report["rates_inf"]) == 2

    def test_csv_report_round_trips(self, capsys, tmp_path):
        out_dir = tmp_path / "run"
        code, out, _ = run_cli(
            capsys, "converge", "ntfsde1d", "--method", "direct-scheme", "--levels", "8,16",
            "--gamma", "1", "--report", "csv", "--out", str(out_dir),
        )
        assert code == 0
        path = out.strip()
        assert path.endswith("report.csv")
        recovered = Report.from_csv(open(path).read())
        assert recovered.levels == [8, 16]


class TestTrainingCommands:
    def test_march_small_run(self, capsys, tmp_path):
        code, out, _ = run_cli(
            capsys, "march", "ntfsde1d", "--alpha", "0.5", "--gamma", "1", "--levels", "4",
            "--max-iters", "40", "--widths", "6,6", "--eps-soe", "1e-7",
            "--out", str(tmp_path), "--seed", "3",
        )
        assert code == 0
        report = json.loads(open(tmp_path / "report.json").read())
        assert report["seed"] == 3
        assert np.isfinite(report["e_inf"][0])
        trace = open(tmp_path / "march_trace.csv").read().splitlines()
        assert trace[0] == "level,iterations,loss"
        assert len(trace) == 5

    def test_solve_forward_small_run(self, capsys, tmp_path):
        code, out, _ = run_cli(
            capsys, "solve-forward", "ntfsde1d", "--gamma", "1", "--levels", "3",
            "--max-iters", "30", "--widths", "6", "--eps-soe", "1e-6", "--out", str(tmp_path),
        )
        assert code == 0
        report = json.loads(open(tmp_path / "report.json").read())
        assert report["method"] == "stagewise"


class TestConfigFile:
    def test_parse_and_precedence(self, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text(
            "[mesh]\nlevels = 8\ngamma = 1\n# comment\n[train]\nmax-iters = 11\nseed = 9\n"
        )
        parsed = _parse_config_file(str(config))
        assert parsed == {"levels": "8", "gamma": "1", "max_iters": "11", "seed": "9"}
        code, out, _ = run_cli(
            capsys, "converge", "ntfsde1d", "--method", "direct-scheme",
            "--config", str(config), "--levels", "4,8",
        )
        assert code == 0
        report = json.loads(out)
        # explicit flag wins over the config file
        assert report["levels"] == [4, 8]
        assert report["seed"] == 9

    def test_malformed_config_rejected(self, tmp_path, capsys):
        config = tmp_path / "bad.cfg"
        config.write_text("levels 8\n")
        code, _, err = run_cli(capsys, "converge", "ntfsde1d", "--config", str(config))
        assert code == 1
        assert "malformed" in json.loads(err)["error"]


class TestSeedEnvironment:
    def test_env_seed_used_as_default(self, capsys, monkeypatch):
        monkeypatch.setenv("FRACPINN_SEED", "31")
        code, out, _ = run_cli(
            capsys, "converge", "ntfsde1d", "--method", "direct-scheme", "--levels", "4,8",
            "--gamma", "1",
        )
        assert code == 0
        assert json.loads(out)["seed"] == 31
