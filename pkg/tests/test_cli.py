import csv
import io
import json
import math

import pytest

from lap2.accountant import MechanismConfig
from lap2.budget import PrivacyPoint, account
from lap2.cli import (CURVE_HEADER, WALLS_HEADER, build_config, format_number, main, parse_range, to_csv,
                      to_json)
from lap2.optimizer import SearchSpec, b_star_init, optimize_parameters, rho_star

BASE = ["--sampling-rate", "0.01", "--steps", "1000", "--dim", "4", "--lambda-max", "256"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    return code, (json.loads(out) if out else None), err


def run_csv(capsys, *argv):
    code, out, err = run(capsys, *argv)
    return code, list(csv.reader(io.StringIO(out))), err


class TestAccount:
    def test_pure_laplace(self, capsys):
        code, rec, _ = run_json(capsys, "account", "--mechanism", "pure_laplace", "--noise-scale", "1")
        assert code == 0 and rec["epsilon"] == 1.0 and rec["delta"] == 0.0

    def test_zero_rate_is_free(self, capsys):
        code, rec, _ = run_json(capsys, "account", "--sampling-rate", "0", "--noise-scale", "1")
        assert code == 0 and rec["epsilon"] == 0.0

    def test_matches_library(self, capsys):
        code, rec, _ = run_json(capsys, "account", *BASE, "--noise-scale", "1.5", "--precision", "17")
        rep = account(MechanismConfig("lap2", 1.0, 1.5, 0.01, 1000, 4, 1e-5, 256))
        assert code == 0
        assert rec["epsilon"] == rep.epsilon and rec["lambda_star"] == rep.lambda_star
        assert rec["effective_config"]["noise_scale"] == 1.5

    def test_output_is_deterministic(self, capsys):
        first = run(capsys, "account", *BASE, "--noise-scale", "2")[1]
        assert run(capsys, "account", *BASE, "--noise-scale", "2")[1] == first

    def test_csv_format(self, capsys):
        code, rows, _ = run_csv(capsys, "account", *BASE, "--noise-scale", "2", "--format", "csv")
        assert code == 0 and rows[0][:2] == ["mechanism", "epsilon"] and len(rows) == 2

    def test_paper_exact_variant_flag(self, capsys):
        args = ["account", "--mechanism", "gaussian", "--noise-scale", "1.1", "--steps", "1000"]
        normal = run_json(capsys, *args)[1]["epsilon"]
        audit = run_json(capsys, *args, "--gaussian-variant", "paper_exact")[1]["epsilon"]
        assert audit < normal


class TestErrors:
    @pytest.mark.parametrize("argv", [["account", "--bogus", "1"], ["account"], ["frobnicate"],
                                      ["account", "--noise-scale", "-1"], ["account", "--mode", "fast"],
                                      ["init"], ["optimize", "--mechanism", "gaussian", "--epsilon", "1"],
                                      ["curve", "--noise-scale", "1"],
                                      ["curve", "--noise-scale", "1", "--range", "3:1:4"]])
    def test_config_errors_exit_2(self, capsys, argv):
        code, out, err = run(capsys, *argv)
        assert code == 2 and out == ""
        assert json.loads(err)["error"]["exit_code"] == 2

    def test_unknown_config_key(self, capsys, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"noise_scale": 1.0, "sigma": 2.0}))
        code, _, err = run(capsys, "account", "--config", str(path))
        assert code == 2 and "sigma" in json.loads(err)["error"]["message"]
        path.write_text(json.dumps({"noise_scale": 1.0, "search": {"c_mid": 1.0}}))
        code, _, err = run(capsys, "account", "--config", str(path))
        assert code == 2 and "c_mid" in err

    def test_build_config_rejects_bad_types(self):
        from lap2.cli import ConfigError
        with pytest.raises(ConfigError):
            build_config({"steps": "many"})


class TestConfigFile:
    def test_round_trip(self, capsys, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"noise_scale": 1.2, "sampling_rate": 0.02, "steps": 50, "dim": 3}))
        first = run_json(capsys, "account", "--config", str(path))[1]
        emitted = tmp_path / "emitted.json"
        emitted.write_text(json.dumps(first["effective_config"]))
        second = run_json(capsys, "account", "--config", str(emitted))[1]
        assert first == second

    def test_flags_override_file(self, capsys, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"noise_scale": 1.2, "steps": 50, "search": {"c_steps": 3}}))
        rec = run_json(capsys, "account", "--config", str(path), "--steps", "70", "--c-steps", "5")[1]
        assert rec["effective_config"]["steps"] == 70
        assert rec["effective_config"]["noise_scale"] == 1.2
        assert rec["effective_config"]["search"]["c_steps"] == 5


class TestOptimizeAndInit:
    def test_optimize_matches_library(self, capsys):
        argv = ["optimize", *BASE, "--epsilon", "1", "--c-min", "0.1", "--c-max", "2", "--c-steps", "4",
                "--precision", "17"]
        code, rec, _ = run_json(capsys, *argv)
        spec = SearchSpec(c_min=0.1, c_max=2.0, c_steps=4, lambda_max=256)
        res = optimize_parameters(1000, 0.01, 4, PrivacyPoint(1.0, 1e-5), spec)
        assert code == 0 and rec["feasible"]
        assert rec["c_star"] == res.c_star and rec["b_star"] == res.b_star
        assert rec["achieved_epsilon"] == res.achieved_epsilon

    def test_optimize_infeasible_box(self, capsys):
        code, rec, _ = run_json(capsys, "optimize", *BASE, "--epsilon", "1", "--b-min", "1e-4",
                                "--b-max", "1e-3", "--c-min", "1", "--c-max", "2", "--c-steps", "2")
        assert code == 3 and rec["feasible"] is False and rec["c_star"] is None

    def test_init(self, capsys):
        code, rec, _ = run_json(capsys, "init", "--epsilon", "1", "--steps", "1000", "--precision", "17")
        assert code == 0
        assert rec["b_star"] == b_star_init(1.0, 1.0, 0.01, 1000, 1e-5)
        assert rec["rho_star"] == rho_star(1.0, 0.01, 1000, 1e-5)


class TestCurve:
    def test_b_sweep_matches_account(self, capsys):
        code, rows, _ = run_csv(capsys, "curve", *BASE, "--noise-scale", "1", "--sweep", "b",
                                "--range", "0.5:2:3", "--precision", "17")
        assert code == 0 and tuple(rows[0]) == CURVE_HEADER and len(rows) == 4
        eps = [float(r[1]) for r in rows[1:]]
        for b, e in zip((0.5, 1.25, 2.0), eps):
            assert e == account(MechanismConfig("lap2", 1.0, b, 0.01, 1000, 4, 1e-5, 256)).epsilon
        assert eps[0] >= eps[1] >= eps[2]

    def test_epsilon_sweep_marks_infeasible(self, capsys):
        code, rows, _ = run_csv(capsys, "curve", *BASE, "--sweep", "epsilon", "--range", "1e-4:1:2",
                                "--spacing", "log", "--b-max", "10")
        assert code == 0
        assert rows[1][1] == "inf" and rows[1][3] == "inf"
        assert float(rows[2][1]) <= 1.0

    def test_json_table(self, capsys):
        code, rec, _ = run_json(capsys, "curve", *BASE, "--noise-scale", "1", "--sweep", "c",
                                "--range", "0.5:1:2", "--format", "json")
        assert code == 0 and rec["columns"] == list(CURVE_HEADER) and len(rec["rows"]) == 2


class TestWalls:
    def test_synthetic_slopes(self, capsys):
        code, rows, _ = run_csv(capsys, "walls", "--synthetic", "--epsilons", "0.5:4:4")
        assert code == 0 and tuple(rows[0]) == WALLS_HEADER
        body = rows[1:]
        assert len(body) == 12
        assert sorted({r[0] for r in body}) == sorted({format_number(q) for q in (1e-3, 1e-2, 1e-1)})
        for r in body:
            assert float(r[4]) == pytest.approx(1.0, abs=1e-9)
            assert float(r[5]) == pytest.approx(1.0, abs=1e-9)

    def test_bad_grid(self, capsys):
        code, _, _ = run(capsys, "walls", "--synthetic", "--epsilons", "1:2:2")
        assert code == 2


class TestFormatting:
    def test_numbers(self):
        assert format_number(1.0, 3) == "1.00e+00"
        assert format_number(math.inf) == "inf" and format_number(math.nan) == "nan"

    def test_json_and_csv(self):
        obj = {"b": math.inf, "a": [1, None, True]}
        assert json.loads(to_json(obj)) == {"b": "inf", "a": [1, None, True]}
        assert json.loads(to_json({"x": math.nan}))["x"] == "nan"
        text = to_csv(["a", "b"], [[1.5, None]], 3)
        assert text == "a,b\n1.50e+00,nan\n"

    def test_parse_range(self):
        assert parse_range("1:4:4", "linear").tolist() == [1.0, 2.0, 3.0, 4.0]
        assert parse_range("1:100:3", "log").tolist() == pytest.approx([1.0, 10.0, 100.0])


def test_verify_fast(capsys, monkeypatch):
    monkeypatch.setenv("NO_COLOR", "1")
    code, rec, err = run_json(capsys, "verify", "--suite", "fast")
    assert code == 0 and rec["passed"] is True
    assert "\033[" not in err and "PASS" in err
