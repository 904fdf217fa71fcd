import json

import pytest

from ccot.cli import main
from ccot.config import Config, load_config, parse_config, presets
from ccot.exceptions import ConfigError
from ccot.pipeline import SWEEP_HEADER

SMALL = {"grid": {"nx": 16, "ny": 16}, "samples": {"n": 20, "seed": 3}}


def _write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def _strip(manifest):
    return {k: v for k, v in manifest.items() if k != "timings"}


class TestConfig:
    def test_defaults(self):
        cfg = Config()
        assert cfg.delta == 0.2 and cfg.samples.n == 100
        assert cfg.solver.iterations() == 10_000
        assert parse_config({"solver": {"name": "bfm"}}).solver.tolerance() == 0.05

    def test_unknown_key_names_the_field(self):
        with pytest.raises(ConfigError, match="solver.epsilonn"):
            parse_config({"solver": {"epsilonn": 1.0}})

    @pytest.mark.parametrize("data", [{"delta": 1.5}, {"grid": {"nx": 1}},
                                      {"classifier": {"id": "f1", "custom": {"weights": [1, 1]}}},
                                      {"domain": {"x_min": 2.0}}])
    def test_invalid_values(self, data):
        with pytest.raises(ConfigError):
            parse_config(data)

    def test_load_errors(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "missing.json")
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(tmp_path / "bad.json")

    def test_presets(self):
        fig5 = dict(presets("fig5"))
        assert fig5["uot_lambda2_0"].solver.lambda2 == 0.0
        assert fig5["uot_lambda2_0"].solver.lambda1 == 1.0
        assert presets("fig8")[0][1].cost.kind == "squared_euclidean"
        with pytest.raises(ConfigError):
            presets("fig9")


class TestCommands:
    def test_run_and_seed_override(self, tmp_path, capsys):
        cfg = _write(tmp_path, SMALL)
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "11"]) == 0
        assert "cce_cost" in json.loads(capsys.readouterr().out)
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert manifest["config"]["samples"]["seed"] == 11
        for name in ("plan.csv", "recommendations.csv", "classic_ce.csv", "density.csv"):
            assert name in manifest["outputs"]

    def test_manifest_rerun_is_identical(self, tmp_path):
        cfg = _write(tmp_path, SMALL)
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "a"), "--quiet"]) == 0
        first = json.loads((tmp_path / "a" / "manifest.json").read_text())
        again = str(tmp_path / "a" / "manifest.json")
        assert main(["run", "--config", again, "--out", str(tmp_path / "b"), "--quiet"]) == 0
        second = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert _strip(first) == _strip(second)

    def test_sweep(self, tmp_path):
        cfg = _write(tmp_path, {**SMALL, "solver": {"name": "uot"}})
        assert main(["sweep", "--config", cfg, "--out", str(tmp_path), "--values", "0", "0.5",
                     "--quiet"]) == 0
        rows = (tmp_path / "sweep.csv").read_text().splitlines()
        assert rows[0] == SWEEP_HEADER and len(rows) == 3

    def test_paths(self, tmp_path):
        cfg = _write(tmp_path, {**SMALL, "paths": {"frames": 3}})
        assert main(["paths", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
        names = sorted(p.name for p in (tmp_path / "paths").iterdir())
        assert names == ["frame_000.csv", "frame_001.csv", "frame_002.csv", "trajectories.csv"]

    def test_reproduce_single_figure(self, tmp_path):
        assert main(["reproduce", "fig4", "--out", str(tmp_path), "--quiet"]) == 0
        summary = json.loads((tmp_path / "fig4" / "summary.json").read_text())
        assert list(summary["runs"]) == ["regions"]


class TestExitCodes:
    def test_unknown_key(self, tmp_path):
        cfg = _write(tmp_path, {"grid": {"nx": 16, "nz": 4}})
        assert main(["run", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 2

    def test_missing_config(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.json"), "--quiet"]) == 2

    def test_infeasible_delta(self, tmp_path):
        cfg = _write(tmp_path, {**SMALL, "classifier": {"id": "f2"}, "delta": 0.95})
        assert main(["run", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 2

    def test_bfm_needs_quadratic_cost(self, tmp_path):
        cfg = _write(tmp_path, {**SMALL, "solver": {"name": "bfm"}})
        assert main(["run", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 2

    def test_numerical_failure(self, tmp_path):
        cfg = _write(tmp_path, {**SMALL, "cost": {"kind": "squared_euclidean"},
                                "solver": {"name": "bfm", "sigma0": 1e-13}})
        assert main(["run", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 3

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
