import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from archipelago.cli import run_cli
from archipelago.errors import ConfigurationError
from archipelago.experiment import load_experiment, parse_experiment, resolve_test_function

from conftest import HMM_E, HMM_M, HMM_Y

HAND = {
    "model": {"type": "finite", "chi": [0.5, 0.5], "M": [[1, 0], [0, 1]], "g": [1, 1]},
    "chain": {"m1": 4, "m2": 4, "steps": 2, "tau": 0},
    "test_functions": {"s1": {"type": "indicator", "state": 1}},
}

HMM = {
    "model": {"type": "finite", "chi": [0.5, 0.5], "M": HMM_M, "emission": HMM_E,
              "observations": HMM_Y},
    "chain": {"m1": 8, "m2": 8, "steps": 5, "tau": 1.0, "seed": 1},
    "test_functions": {"s1": {"type": "indicator", "state": 1},
                       "t": {"type": "table", "values": [2.0, -1.0]}},
    "replicates": 120,
    "deviation": {"m2_grid": [4, 16, 64], "epsilon": 0.15, "replicates": 100},
}


def write(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
    return str(path)


def run(tmp_path, *args, out="out"):
    return run_cli([*args, "--out", str(tmp_path / out)])


class TestOracle:
    def test_hand_values(self, tmp_path):
        cfg = write(tmp_path, HAND)
        assert run(tmp_path, "oracle", cfg) == 0
        data = json.loads((tmp_path / "out" / "oracle.json").read_text())
        assert data["b2_total"] == 0.75 and data["sisr_total"] == 0.5
        assert data["basil_total"] == 0.75 and data["recursive_total"] == pytest.approx(0.75)
        assert data["epsilon"] == [1, 1]
        assert set(data["functions"]) == {"s1"}
        assert "version" in data and "config" in data

    def test_needs_finite_model(self, tmp_path, capsys):
        cfg = write(tmp_path, {"model": {"type": "lgssm", "a": 1, "sigma_x": 1, "sigma_y": 1,
                                         "observations": [0, 1]}, "chain": {"m1": 1, "m2": 1}})
        assert run(tmp_path, "oracle", cfg) == 2
        assert capsys.readouterr().err.startswith("ERROR 2:")

    def test_mixing_bound_reported(self, tmp_path):
        cfg = dict(HMM, oracle={"tau": "inf"})
        assert run(tmp_path, "oracle", write(tmp_path, cfg)) == 0
        data = json.loads((tmp_path / "out" / "oracle.json").read_text())
        assert data["tau"] == "inf"
        assert data["mixing_bound"] >= data["b2_total"]
        assert data["functions"]["t"]["sisr_total"] == data["functions"]["t"]["basil_total"]


class TestRun:
    def test_outputs(self, tmp_path):
        assert run(tmp_path, "run", write(tmp_path, HMM), "--seed", "7") == 0
        out = tmp_path / "out"
        with open(out / "telemetry.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["step", "cv", "sil_triggered", "estimate_s1", "estimate_t", "scale_factor"]
        assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4", "5"]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["seeds"]["master_seed"] == 7
        assert summary["config"]["chain"]["seed"] == 7
        assert summary["wall_clock_seconds"] >= 0
        assert isinstance(summary["version"], str) and summary["version"]
        z = np.prod([float(r[-1]) for r in rows[1:]])
        assert summary["normalizing_constant"] == pytest.approx(z, rel=1e-15)

    def test_floats_round_trip(self, tmp_path):
        from archipelago import ChainConfig, run_chain
        from archipelago.experiment import parse_experiment
        assert run(tmp_path, "run", write(tmp_path, HMM)) == 0
        exp = parse_experiment(HMM)
        res = run_chain(exp.model, ChainConfig.from_dict(HMM["chain"]), exp.test_functions)
        with open(tmp_path / "out" / "telemetry.csv") as fh:
            rows = list(csv.DictReader(fh))
        for row, t in zip(rows, res.telemetry):
            assert float(row["cv"]) == t.cv
            assert float(row["estimate_s1"]) == t.estimates["s1"]
            assert float(row["scale_factor"]) == t.scale_factor

    @pytest.mark.parametrize("tau", [0, 1.0, "inf"])
    def test_threads_byte_identical(self, tmp_path, tau):
        cfg = write(tmp_path, dict(HMM, chain=dict(HMM["chain"], tau=tau)))
        assert run(tmp_path, "run", cfg, "--seed", "7", "--threads", "1", out="a") == 0
        assert run(tmp_path, "run", cfg, "--seed", "7", "--threads", "4", out="b") == 0
        a = (tmp_path / "a" / "telemetry.csv").read_bytes()
        assert a == (tmp_path / "b" / "telemetry.csv").read_bytes()

    def test_env_threads(self, tmp_path, monkeypatch):
        cfg = write(tmp_path, HMM)
        monkeypatch.setenv("ARCHIPELAGO_THREADS", "3")
        assert run(tmp_path, "run", cfg) == 0
        assert json.loads((tmp_path / "out" / "summary.json").read_text())["threads"] == 3
        monkeypatch.setenv("ARCHIPELAGO_THREADS", "many")
        assert run(tmp_path, "run", cfg) == 2

    def test_model_file(self, tmp_path):
        write(tmp_path, HMM["model"], "model.json")
        cfg = {k: v for k, v in HMM.items() if k != "model"}
        cfg["model_file"] = "model.json"
        assert run(tmp_path, "run", write(tmp_path, cfg)) == 0

    def test_degeneracy_exit(self, tmp_path, capsys):
        cfg = {"model": {"type": "finite", "chi": [1.0, 0.0], "M": [[0, 1], [0, 1]], "g": [1, 1],
                         "proposal": [[0.5, 0.5], [0.5, 0.5]]},
               "chain": {"m1": 1, "m2": 1, "steps": 1, "seed": 0}}
        assert run(tmp_path, "run", write(tmp_path, cfg)) == 3
        assert capsys.readouterr().err.startswith("ERROR 3:")

    def test_output_from_config(self, tmp_path):
        cfg = write(tmp_path, dict(HMM, output="results"))
        assert run_cli(["run", cfg]) == 0
        assert (tmp_path / "results" / "telemetry.csv").is_file()


class TestValidateAndDeviation:
    def test_validate_passes(self, tmp_path):
        assert run(tmp_path, "validate", write(tmp_path, HMM)) == 0
        report = json.loads((tmp_path / "out" / "validate.json").read_text())
        names = [c["name"] for c in report["checks"]]
        assert names == ["oracle_consistency", "variance_ordering", "clt_b2", "clt_sisr", "clt_basil"]
        with open(tmp_path / "out" / "replicates.csv") as fh:
            assert sum(1 for _ in fh) == 1 + 3 * 120

    def test_validate_gate_failure(self, tmp_path):
        # a single particle ignores the likelihood, so its mean stays near the prior
        cfg = {"model": {"type": "lgssm", "a": 0.9, "sigma_x": 1, "sigma_y": 0.1,
                         "observations": [5, 5, 5, 5]},
               "chain": {"m1": 1, "m2": 1, "steps": 3, "seed": 3}, "replicates": 100}
        assert run(tmp_path, "validate", write(tmp_path, cfg)) == 1

    def test_deviation(self, tmp_path):
        assert run(tmp_path, "deviation", write(tmp_path, HMM), "--threads", "2") == 0
        with open(tmp_path / "out" / "deviation.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["m2", "tail_probability", "standard_error", "log_tail_probability"]
        assert [r[0] for r in rows[1:]] == ["4", "16", "64"]


class TestConfigErrors:
    @pytest.mark.parametrize("payload", [
        "{not json",
        "[]",
        json.dumps({"chain": {"m1": 1, "m2": 1}}),
        json.dumps({**HAND, "chain": {"m1": 0, "m2": 1}}),
        json.dumps({**HAND, "chain": {"m1": 1, "m2": 1, "steps": 9, "bogus": 1}}),
        json.dumps({**HAND, "extra": 1}),
        json.dumps({**HAND, "test_functions": {"s": {"type": "indicator", "state": 5}}}),
        json.dumps({**HAND, "test_functions": {"s": {"type": "table", "values": [1]}}}),
        json.dumps({**HAND, "replicates": -3}),
        json.dumps({**HAND, "model_file": "missing.json"}),
        json.dumps({**HAND, "validate": {"schemes": ["nope"]}}),
    ])
    def test_malformed(self, tmp_path, payload, capsys):
        assert run(tmp_path, "run", write(tmp_path, payload)) == 2
        assert capsys.readouterr().err.startswith("ERROR 2:")

    def test_missing_file(self, tmp_path):
        assert run_cli(["run", str(tmp_path / "nope.json")]) == 2

    def test_bad_arguments(self, tmp_path):
        assert run_cli(["explode", write(tmp_path, HAND)]) == 2
        assert run_cli([]) == 2
        assert run_cli(["run", write(tmp_path, HAND), "--threads", "0"]) == 2

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "archipelago", "oracle", write(tmp_path, HAND),
                               "--out", str(tmp_path / "o")], capture_output=True, text=True)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["b2_total"] == 0.75


class TestExperiment:
    def test_defaults(self):
        exp = parse_experiment({"model": HMM["model"], "chain": {"m1": 2, "m2": 2}})
        assert list(exp.test_functions) == ["state1"] and exp.replicates == 100

    def test_lgssm_default_function(self):
        exp = parse_experiment({"model": {"type": "lgssm", "a": 1, "sigma_x": 1, "sigma_y": 1,
                                          "observations": [0]}, "chain": {"m1": 1, "m2": 1}})
        assert exp.test_functions["x"](np.array([1.5])).tolist() == [1.5]

    def test_functions(self):
        exp = parse_experiment(HMM)
        assert exp.test_functions["t"](np.array([0, 1, 1])).tolist() == [2.0, -1.0, -1.0]
        with pytest.raises(ConfigurationError):
            resolve_test_function({"type": "coordinate", "index": 2}, exp.model)
        with pytest.raises(ConfigurationError):
            resolve_test_function({"type": "mystery"}, exp.model)

    def test_load(self, tmp_path):
        exp = load_experiment(write(tmp_path, HMM))
        assert exp.source.endswith("config.json")
        assert exp.to_dict()["chain"]["tau"] == 1.0
