import json
import os
from pathlib import Path

import numpy as np
import pytest

import decaylab as dl
from decaylab.cli import main
from decaylab.scenario import emit_toml, load_scenario, scenario_from_dict


def write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


GOLDEN = """
[nonlinearity]
kind = "power"
beta = 2.0

[perturbation]
form = "power_tail"
c = 1.0
q = 3.0

[run]
xi = 1.0
horizon = 1e5
"""

ADVERSARIAL = GOLDEN.replace("q = 3.0", "q = 1.5").replace("horizon = 1e5", "horizon = 1e6")

SDE = """
[nonlinearity]
kind = "power"
beta = 2.0

[noise]
form = "power_tail"
c = 1.0
p = 2.0

[run]
xi = 1.0
paths = 24
seed = 42
"""


class TestScenarioParsing:
    def test_defaults_filled(self, tmp_path):
        sc = load_scenario(write(tmp_path / "s.toml", GOLDEN))
        assert sc.run.horizon == 1e5
        assert sc.run.tol_lambda == 0.05
        assert sc.mode == "ode"

    def test_missing_beta_names_field(self, tmp_path):
        bad = GOLDEN.replace('beta = 2.0\n', "")
        with pytest.raises(dl.ConfigError) as err:
            load_scenario(write(tmp_path / "s.toml", bad))
        assert "beta" in str(err.value)

    def test_perturbation_and_noise_exclusive(self):
        raw = {
            "nonlinearity": {"kind": "linear"},
            "perturbation": {"form": "zero"},
            "noise": {"form": "constant", "c": 1.0},
            "run": {"seed": 1},
        }
        with pytest.raises(dl.ConfigError) as err:
            scenario_from_dict(raw)
        assert "mutually exclusive" in str(err.value)

    def test_seed_required_with_noise(self, tmp_path):
        bad = SDE.replace("seed = 42\n", "")
        with pytest.raises(dl.ConfigError) as err:
            load_scenario(write(tmp_path / "s.toml", bad))
        assert "seed" in str(err.value)

    def test_nonpositive_tolerance_rejected(self):
        raw = {"nonlinearity": {"kind": "linear"}, "run": {"rtol": 0.0}}
        with pytest.raises(dl.ConfigError):
            scenario_from_dict(raw)

    def test_sde_horizon_defaults_to_1e4(self):
        raw = {"nonlinearity": {"kind": "power", "beta": 2.0},
               "noise": {"form": "constant", "c": 1.0}, "run": {"seed": 5}}
        assert scenario_from_dict(raw).run.horizon == 1e4

    def test_custom_table_loaded(self, tmp_path):
        x = np.geomspace(1e-3, 1.5, 80)
        np.savetxt(tmp_path / "f.csv", np.column_stack([x, x**2]), delimiter=",")
        sc = scenario_from_dict(
            {"nonlinearity": {"kind": "custom", "table": "f.csv"}}, base_dir=tmp_path
        )
        assert sc.f.kind == "custom"
        assert dl.eval_f(sc.f, 0.5) == pytest.approx(0.25, rel=1e-4)

    def test_missing_table_file_diagnosed(self, tmp_path):
        with pytest.raises(dl.ConfigError) as err:
            scenario_from_dict(
                {"nonlinearity": {"kind": "custom", "table": "absent.csv"}}, base_dir=tmp_path
            )
        assert "absent.csv" in str(err.value)

    def test_unknown_section_rejected(self):
        with pytest.raises(dl.ConfigError):
            scenario_from_dict({"nonlinearity": {"kind": "linear"}, "typo": {}})


class TestOdeRun:
    def test_golden_scenario_exit_zero(self, tmp_path, capsys):
        s = write(tmp_path / "s.toml", GOLDEN + f'\n[output]\ndirectory = "{tmp_path}/out"\n')
        assert main(["ode", "run", "--scenario", str(s)]) == 0
        out = tmp_path / "out"
        assert (out / "trajectory.csv").exists()
        assert (out / "verdict.json").exists()
        v = json.loads((out / "verdict.json").read_text())
        assert v["observed"]["kind"] == "Preserved" and v["lambda"] == 1
        assert v["agreement"] is True
        header = (out / "trajectory.csv").read_text().splitlines()[0]
        assert header == "t,x,deriv,Finv,ratio"

    def test_adversarial_scenario_still_agrees(self, tmp_path):
        s = write(tmp_path / "s.toml", ADVERSARIAL + f'\n[output]\ndirectory = "{tmp_path}/out"\n')
        assert main(["ode", "run", "--scenario", str(s)]) == 0
        v = json.loads((tmp_path / "out" / "verdict.json").read_text())
        assert v["observed"]["kind"] == "NotPreserved"
        assert v["agreement"] is True

    def test_malformed_config_exit_one(self, tmp_path, capsys):
        s = write(tmp_path / "bad.toml", GOLDEN.replace("beta = 2.0\n", ""))
        assert main(["ode", "run", "--scenario", str(s)]) == 1
        assert "beta" in capsys.readouterr().err

    def test_failed_run_leaves_no_partial_artifacts(self, tmp_path):
        s = write(tmp_path / "bad.toml", GOLDEN.replace("beta = 2.0\n", ""))
        out = tmp_path / "out"
        main(["ode", "run", "--scenario", str(s), "--out", str(out)])
        assert not out.exists() or not any(out.iterdir())

    def test_config_round_trip_reproduces(self, tmp_path):
        s = write(tmp_path / "s.toml", GOLDEN + f'\n[output]\ndirectory = "{tmp_path}/out1"\n')
        assert main(["ode", "run", "--scenario", str(s)]) == 0
        eff = tmp_path / "out1" / "effective_config.toml"
        sc = load_scenario(eff)
        assert sc.run.horizon == 1e5
        text = eff.read_text()
        replay = write(tmp_path / "replay.toml",
                       text.replace(f"{tmp_path}/out1", f"{tmp_path}/out2"))
        assert main(["ode", "run", "--scenario", str(replay)]) == 0
        a = (tmp_path / "out1" / "trajectory.csv").read_bytes()
        b = (tmp_path / "out2" / "trajectory.csv").read_bytes()
        assert a == b

    def test_verdict_command(self, tmp_path):
        s = write(tmp_path / "s.toml", GOLDEN)
        out = tmp_path / "vd"
        assert main(["verdict", "--scenario", str(s), "--out", str(out)]) == 0
        assert (out / "verdict.json").exists()
        lines = (out / "ratio.csv").read_text().splitlines()
        assert lines[0] == "t,ratio,deriv_ratio"

    def test_unperturbed_scenario(self, tmp_path):
        bare = GOLDEN.split("[perturbation]")[0] + "[run]\nxi = -1.0\nhorizon = 1e5\n"
        s = write(tmp_path / "s.toml", bare)
        out = tmp_path / "un"
        assert main(["ode", "run", "--scenario", str(s), "--out", str(out)]) == 0
        v = json.loads((out / "verdict.json").read_text())
        assert v["observed"] == {"kind": "Preserved", "lambda": -1}

    def test_horizon_below_one_rejected(self, tmp_path):
        s = write(tmp_path / "s.toml", GOLDEN.replace("horizon = 1e5", "horizon = 0.5"))
        assert main(["ode", "run", "--scenario", str(s)]) == 1


class TestSdeRun:
    def test_ensemble_artifacts(self, tmp_path):
        s = write(tmp_path / "s.toml", SDE)
        out = tmp_path / "out"
        code = main(["sde", "run", "--scenario", str(s), "--out", str(out)])
        assert code == 0
        lines = (out / "ensemble.csv").read_text().splitlines()
        assert lines[0] == "path,terminal_state,terminal_ratio,bucket"
        assert len(lines) == 1 + 24
        summary = json.loads((out / "ensemble_summary.json").read_text())
        assert summary["n_paths"] == 24 and summary["seed"] == 42
        assert "fractions" in summary and "mu" in summary

    def test_seed_override_changes_ensemble(self, tmp_path):
        s = write(tmp_path / "s.toml", SDE)
        main(["sde", "run", "--scenario", str(s), "--out", str(tmp_path / "a"), "--seed", "1"])
        main(["sde", "run", "--scenario", str(s), "--out", str(tmp_path / "b"), "--seed", "2"])
        assert (tmp_path / "a" / "ensemble.csv").read_bytes() != (tmp_path / "b" / "ensemble.csv").read_bytes()

    def test_paths_override(self, tmp_path):
        s = write(tmp_path / "s.toml", SDE)
        main(["sde", "run", "--scenario", str(s), "--out", str(tmp_path / "c"), "--paths", "8"])
        lines = (tmp_path / "c" / "ensemble.csv").read_text().splitlines()
        assert len(lines) == 1 + 8


class TestOtherCommands:
    def test_flow_dump(self, tmp_path):
        out = tmp_path / "dump"
        assert main(["flow", "dump", "--f", "power:2", "--t-max", "1e4",
                     "--points", "40", "--out", str(out)]) == 0
        lines = (out / "flow.csv").read_text().splitlines()
        assert lines[0] == "t,Finv"
        assert len(lines) == 1 + 40
        assert lines[1].startswith("0.0,1.0")

    def test_analyze_f_all_catalog(self, tmp_path, capsys):
        for code, regime in (("power:2", "PowerLike"), ("linear", "SlowerThanPower"),
                             ("flat_exponential", "FasterThanPower")):
            out = tmp_path / code.replace(":", "_")
            assert main(["analyze-f", "--f", code, "--out", str(out)]) == 0
            data = json.loads((out / "analysis.json").read_text())
            assert data["regime"] == regime
        data = json.loads((tmp_path / "power_2" / "analysis.json").read_text())
        assert data["rho"]["l"] == pytest.approx(1.0, abs=1e-4)
        assert data["phi_F_bounds"]["all_within"] is True

    def test_analyze_f_needs_one_source(self, capsys):
        assert main(["analyze-f"]) == 1

    def test_artifact_determinism_across_runs(self, tmp_path):
        for d in ("r1", "r2"):
            main(["flow", "dump", "--f", "power:3", "--t-max", "1e5",
                  "--points", "64", "--out", str(tmp_path / d)])
        assert (tmp_path / "r1" / "flow.csv").read_bytes() == (tmp_path / "r2" / "flow.csv").read_bytes()

    def test_env_var_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DECAYLAB_OUTPUT_DIR", str(tmp_path / "envout"))
        assert main(["flow", "dump", "--f", "linear", "--t-max", "10", "--points", "5"]) == 0
        assert (tmp_path / "envout" / "flow.csv").exists()


class TestEmitToml:
    def test_round_trip_values(self, tmp_path):
        from decaylab.scenario import tomllib

        sc = load_scenario(write(tmp_path / "s.toml", SDE))
        text = emit_toml(sc.effective)
        sc2 = scenario_from_dict(tomllib.loads(text), base_dir=tmp_path)
        assert sc2.run.horizon == sc.run.horizon
        assert sc2.run.seed == sc.run.seed
        assert sc2.noise.p == sc.noise.p
