"""Command-line interface: subcommands, config files, exit codes."""

import json

import pytest

from fbsde_pc import adams_pair, stable_preset
from fbsde_pc.cli import main, read_config
from fbsde_pc.schemes import save_scheme, scheme_to_dict, unstable_two_step


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestCoeffs:
    def test_prints_adams_scheme(self, capsys):
        code, out, _ = run_cli(capsys, "coeffs", "--steps", "2", "--family", "adams")
        assert code == 0
        doc = json.loads(out)
        assert doc == scheme_to_dict(adams_pair(2))

    def test_default_family_is_stable(self, capsys):
        code, out, _ = run_cli(capsys, "coeffs", "--steps", "3")
        assert code == 0
        assert json.loads(out)["gamma0"] == "5/6"

    def test_writes_file(self, tmp_path, capsys):
        target = tmp_path / "scheme.json"
        code, _, _ = run_cli(capsys, "coeffs", "--steps", "1", "--out", str(target))
        assert code == 0
        assert json.loads(target.read_text())["m"] == 1

    def test_bad_steps_exit_code(self, capsys):
        code, _, err = run_cli(capsys, "coeffs", "--steps", "9", "--family", "adams")
        assert code == 2
        assert "error" in err


class TestStability:
    def test_verdict_from_scheme_file(self, tmp_path, capsys):
        path = tmp_path / "unstable.json"
        save_scheme(unstable_two_step(), path)
        code, out, _ = run_cli(capsys, "stability", "--scheme", str(path),
                               "--tol", "1e-8")
        assert code == 0
        doc = json.loads(out)
        assert doc["status"] == "unstable"
        assert len(doc["offending"]) == 1
        assert doc["offending"][0]["re"] == pytest.approx(2.0, abs=1e-8)
        assert {"re", "im", "modulus", "multiplicity"} <= set(doc["roots"][0])

    def test_verdict_from_steps(self, capsys):
        code, out, _ = run_cli(capsys, "stability", "--steps", "3")
        assert code == 0
        assert json.loads(out)["status"] == "stable"


class TestSolve:
    def test_deterministic_solve(self, capsys):
        code, out, _ = run_cli(
            capsys, "solve", "--problem", "exponential-ode", "--deterministic",
            "--steps", "2", "--family", "adams", "--N", "16")
        assert code == 0
        doc = json.loads(out)
        assert doc["y0"] == pytest.approx(0.36788, abs=1e-3)
        assert doc["config"]["grid"]["N"] == 16
        assert "runtime_sec" in doc

    def test_small_monte_carlo_solve(self, capsys):
        code, out, _ = run_cli(
            capsys, "solve", "--problem", "example2", "--steps", "1",
            "--N", "5", "--M", "2000", "--seed", "1")
        assert code == 0
        doc = json.loads(out)
        assert doc["y0"] == pytest.approx(0.731, abs=0.05)
        assert len(doc["z0"]) == 1

    def test_unstable_scheme_needs_override(self, capsys):
        args = ["solve", "--problem", "exponential-ode", "--deterministic",
                "--steps", "2", "--family", "unstable", "--N", "12"]
        code, _, err = run_cli(capsys, *args)
        assert code == 2
        assert "allow_unstable" in err
        code, out, _ = run_cli(capsys, *args, "--allow-unstable")
        assert code == 0


class TestConvergence:
    def test_deterministic_ladder_csv(self, tmp_path, capsys):
        out_base = tmp_path / "report"
        code, out, _ = run_cli(
            capsys, "convergence", "--problem", "exponential-ode",
            "--deterministic", "--steps", "2", "--family", "adams",
            "--N", "10,20", "--M", "1", "--batches", "2", "--out", str(out_base))
        assert code == 0
        csv_text = (tmp_path / "report.csv").read_text()
        assert csv_text.startswith("N,M,err_y")
        assert "# rate_y=" in csv_text
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["rate_y"] == pytest.approx(2.0, abs=0.3)
        assert (tmp_path / "report_y.dat").exists()

    def test_stdout_json(self, capsys):
        code, out, _ = run_cli(
            capsys, "convergence", "--problem", "exponential-ode",
            "--deterministic", "--steps", "1", "--N", "8,16", "--M", "1",
            "--batches", "2", "--format", "json")
        assert code == 0
        assert "rows" in json.loads(out)


class TestStabilityDemo:
    def test_unstable_classification(self, capsys):
        code, out, _ = run_cli(
            capsys, "stability-demo", "--problem", "exponential-ode",
            "--deterministic", "--steps", "2", "--family", "unstable",
            "--N", "10,20,40", "--M", "1")
        assert code == 0
        doc = json.loads(out)
        assert doc["classification"] == "irregular"
        assert len(doc["rows"]) == 3


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# ladder setup\n"
            "problem = exponential-ode\n"
            "deterministic = true\n"
            "family = adams\n"
            "steps = 2\n"
            "N = 16\n"
            "M = 1\n")
        code, out, _ = run_cli(capsys, "solve", "--config", str(cfg))
        assert code == 0
        assert json.loads(out)["config"]["grid"]["N"] == 16
        # flag overrides the file value
        code, out, _ = run_cli(capsys, "solve", "--config", str(cfg), "--N", "8")
        assert json.loads(out)["config"]["grid"]["N"] == 8

    def test_malformed_config(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("steps 2\n")
        code, _, err = run_cli(capsys, "solve", "--config", str(cfg))
        assert code == 2

    def test_read_config_parsing(self, tmp_path):
        cfg = tmp_path / "a.cfg"
        cfg.write_text("basis-degree = 3  # comment\n\nseed=9\n")
        values = read_config(cfg)
        assert values == {"basis_degree": "3", "seed": "9"}


class TestExitCodes:
    def test_missing_scheme_file(self, capsys):
        code, _, err = run_cli(capsys, "coeffs", "--scheme-file", "/nope/missing.json")
        assert code == 2

    def test_validation_error_is_2(self, capsys):
        # N < m is a precondition violation
        code, _, _ = run_cli(capsys, "solve", "--problem", "exponential-ode",
                             "--deterministic", "--steps", "3", "--N", "2")
        assert code == 2
