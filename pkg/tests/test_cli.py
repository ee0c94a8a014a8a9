import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from opgrowth import experiments
from opgrowth.cli import main
from opgrowth.experiments import (
    DEFAULTS,
    EXPERIMENTS,
    THRESHOLDS,
    ExperimentError,
    ExperimentSpec,
    UnknownExperimentError,
    check_report,
    default_workers,
    evaluate,
)
from opgrowth.ruc import GrowthCurve
from opgrowth.sizes import read_csv, write_csv

SMALL_PROTOCOL = {"n": 4, "t": 1.0, "shots": 500, "mus": [0.0, 0.5]}
SMALL_FIG2A = {"n": 40, "trajectories": 300, "layers": 30, "fit_window": [5, 25]}


def write_spec(path, name, config, seed=3, out=None):
    lines = [f'name = "{name}"', f"seed = {seed}"]
    if out is not None:
        lines.append(f'output_dir = "{out}"')
    lines.append("[config]")
    for k, v in config.items():
        lines.append(f"{k} = {json.dumps(v)}")
    path.write_text("\n".join(lines) + "\n")
    return path


class TestList:
    def test_lists_every_experiment(self, capsys):
        assert main(["list"]) == 0
        out = capsys.readouterr().out
        for name in ("fig2a_1d", "fig2b_all_to_all", "nstar_scan", "fig3_otoc", "eq5_eq6_identities",
                     "protocol_gmu", "conserved_profile"):
            assert name in out


class TestRun:
    def test_unknown_name(self, tmp_path, capsys):
        spec = write_spec(tmp_path / "s.toml", "no_such_experiment", {})
        assert main(["run", str(spec)]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "unknown_experiment" and "fig2a_1d" in err["known"]

    def test_unknown_config_key(self, tmp_path, capsys):
        spec = write_spec(tmp_path / "s.toml", "protocol_gmu", {"colour": 1})
        assert main(["run", str(spec)]) == 2
        assert json.loads(capsys.readouterr().err)["error"] == "invalid_spec"

    def test_malformed_toml(self, tmp_path, capsys):
        spec = tmp_path / "bad.toml"
        spec.write_text("name = \n")
        assert main(["run", str(spec)]) == 2
        assert "error" in json.loads(capsys.readouterr().err)

    def test_resource_budget(self, tmp_path, capsys, monkeypatch):
        original = experiments.ruc.CircuitConfig.__init__

        def tight(self, *args, **kwargs):
            kwargs["memory_budget"] = 10
            original(self, *args, **kwargs)

        monkeypatch.setattr(experiments.ruc.CircuitConfig, "__init__", tight)
        spec = write_spec(tmp_path / "s.toml", "fig2a_1d", SMALL_FIG2A, out=tmp_path / "o")
        assert main(["run", str(spec)]) == 3
        assert json.loads(capsys.readouterr().err)["error"] == "resource_budget"

    def test_degenerate_fit_window(self, tmp_path, capsys):
        cfg = dict(SMALL_FIG2A, fit_window=[5, 5.5])
        spec = write_spec(tmp_path / "s.toml", "fig2a_1d", cfg, out=tmp_path / "o")
        assert main(["run", str(spec)]) == 4
        assert json.loads(capsys.readouterr().err)["error"] == "fit_window"

    def test_protocol_artifacts(self, tmp_path, capsys):
        out = tmp_path / "run"
        spec = write_spec(tmp_path / "s.toml", "protocol_gmu", SMALL_PROTOCOL)
        code = main(["run", str(spec), "--out", str(out), "--seed", "5", "--threads", "2"])
        stdout = capsys.readouterr().out
        assert code == 0
        assert "[PASS] criterion  9 protocol_max_z" in stdout
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 5 and manifest["workers"] == 2
        assert manifest["config"]["shots"] == 500 and manifest["config"]["epsilon"] == 0.05
        assert manifest["version"].startswith("0.1.0")
        report = json.loads((out / "report.json").read_text())
        assert report["status"] == "PASS"
        with open(out / "protocol.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["mu", "F_estimate", "stderr", "oracle"]
        assert len(rows) == 2
        assert any(p.suffix == ".svg" for p in out.iterdir())

    def test_check_round_trip(self, tmp_path, capsys):
        out = tmp_path / "run"
        spec = write_spec(tmp_path / "s.toml", "protocol_gmu", SMALL_PROTOCOL, out=out)
        assert main(["run", str(spec)]) == 0
        assert main(["check", str(out / "report.json")]) == 0
        report = json.loads((out / "report.json").read_text())
        for c in report["criteria"]:
            if c["name"] == "protocol_max_z":
                c["value"] = 10.0
        tampered = tmp_path / "tampered.json"
        tampered.write_text(json.dumps(report))
        assert main(["check", str(tampered)]) == 1
        capsys.readouterr()
        tampered.write_text("{not json")
        assert main(["check", str(tampered)]) == 2

    def test_json_spec(self, tmp_path):
        spec = tmp_path / "s.json"
        spec.write_text(json.dumps({"name": "protocol_gmu", "seed": 1, "config": SMALL_PROTOCOL,
                                    "output_dir": str(tmp_path / "o")}))
        assert main(["run", str(spec)]) == 0

    def test_bad_threads(self, tmp_path, capsys):
        spec = write_spec(tmp_path / "s.toml", "protocol_gmu", SMALL_PROTOCOL)
        assert main(["run", str(spec), "--threads", "0"]) == 2


class TestDeterminism:
    @staticmethod
    def _csvs(out):
        return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}

    @pytest.mark.parametrize("name, config", [("protocol_gmu", SMALL_PROTOCOL), ("fig2a_1d", SMALL_FIG2A)])
    def test_bit_identical(self, tmp_path, name, config, capsys):
        spec = write_spec(tmp_path / "s.toml", name, config)
        main(["run", str(spec), "--out", str(tmp_path / "a")])
        main(["run", str(spec), "--out", str(tmp_path / "b"), "--threads", "3"])
        a, b = self._csvs(tmp_path / "a"), self._csvs(tmp_path / "b")
        assert a and a == b
        ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
        mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert ma["config"] == mb["config"] and ma["seed"] == mb["seed"]

    def test_csv_round_trips(self, tmp_path, capsys):
        spec = write_spec(tmp_path / "s.toml", "fig2a_1d", SMALL_FIG2A, out=tmp_path / "o")
        main(["run", str(spec)])
        out = tmp_path / "o"
        for path in out.glob("growth_*.csv"):
            curve = GrowthCurve.read_csv(path)
            curve.write_csv(tmp_path / "again.csv")
            assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()
        for path in out.glob("size_final_*.csv"):
            write_csv(read_csv(path), tmp_path / "again.csv")
            assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


class TestEnvironment:
    def test_thread_override(self, monkeypatch):
        monkeypatch.setenv("OPGROWTH_THREADS", "3")
        assert default_workers() == 3
        monkeypatch.setenv("OPGROWTH_THREADS", "many")
        with pytest.raises(ExperimentError):
            default_workers()
        monkeypatch.delenv("OPGROWTH_THREADS")
        assert default_workers() == 1

    def test_env_reaches_manifest(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OPGROWTH_THREADS", "2")
        spec = write_spec(tmp_path / "s.toml", "protocol_gmu", SMALL_PROTOCOL, out=tmp_path / "o")
        assert main(["run", str(spec)]) == 0
        assert json.loads((tmp_path / "o" / "manifest.json").read_text())["workers"] == 2

    @pytest.mark.skipif(shutil.which("opgrowth") is None, reason="console script not installed")
    def test_console_script(self):
        done = subprocess.run(["opgrowth", "list"], capture_output=True, text=True)
        assert done.returncode == 0 and "fig3_otoc" in done.stdout

    def test_module_entry(self):
        done = subprocess.run([sys.executable, "-m", "opgrowth.cli", "list"], capture_output=True, text=True)
        assert done.returncode == 0 and "protocol_gmu" in done.stdout


class TestSpecs:
    def test_spec_validation(self):
        with pytest.raises(UnknownExperimentError):
            ExperimentSpec(name="nope")
        with pytest.raises(ExperimentError):
            ExperimentSpec.from_dict({"name": "fig3_otoc", "colour": 1})
        with pytest.raises(ExperimentError):
            ExperimentSpec.from_dict({"seed": 1})

    def test_resolved_merges_defaults(self):
        spec = ExperimentSpec(name="fig3_otoc", config={"n": 6})
        cfg = spec.resolved()
        assert cfg["n"] == 6 and cfg["eta_reversal"] == DEFAULTS["fig3_otoc"]["eta_reversal"]

    def test_shipped_specs_parse(self):
        from pathlib import Path

        from opgrowth.cli import load_spec

        root = Path(__file__).resolve().parents[1] / "specs"
        names = set()
        for path in root.glob("*.toml"):
            names.add(ExperimentSpec.from_dict(load_spec(path)).name)
        assert names == set(EXPERIMENTS)


class TestThresholds:
    """Thresholds are encoded once; these pins guard against silent loosening."""

    @pytest.mark.parametrize(
        "name, op, limit",
        [
            ("eigen_failures", "==", 0), ("eigen_runtime_s", "<", 10),
            ("otoc_size_max_abs_diff", "<", 1e-10), ("otoc_size_runtime_s", "<", 120),
            ("echo_identity_max_residual", "<", 1e-6), ("echo_identity_runtime_s", "<", 300),
            ("width_identity_max_residual", "<", 1e-6), ("width_identity_oracle_max_diff", "<", 1e-6), ("width_identity_runtime_s", "<", 60),
            ("ballistic_mean_rel_err", "<", 0.10), ("ballistic_log_echo_rel_err", "<", 0.10), ("ballistic_runtime_s", "<", 600),
            ("a2a_gamma", "abs<=", 0.1), ("a2a_echo_rate_spread", "<", 0.15),
            ("a2a_plateau_shift_sigma", "<=", 1.0), ("a2a_runtime_s", "<", 900),
            ("nstar_1d_r2", ">", 0.95), ("nstar_a2a_spread", "<", 0.20), ("nstar_runtime_s", "<", 1200),
            ("otoc_front_r2", ">", 0.9), ("otoc_runtime_s", "<", 600),
            ("protocol_max_z", "<=", 3.0), ("protocol_mu0_stderr", "==", 0.0), ("protocol_runtime_s", "<", 300),
            ("markov_max_z", "<=", 4.0), ("markov_runtime_s", "<", 60),
        ],
    )
    def test_pinned(self, name, op, limit):
        t = THRESHOLDS[name]
        assert (t.op, t.limit) == (op, limit)

    def test_gamma_target(self):
        assert THRESHOLDS["a2a_gamma"].target == -1.0
        assert evaluate("a2a_gamma", -0.95)["passed"]
        assert not evaluate("a2a_gamma", -0.85)["passed"]

    def test_every_criterion_covered(self):
        assert {t.criterion for t in THRESHOLDS.values()} == set(range(1, 11))

    def test_missing_value_fails(self):
        assert not evaluate("otoc_front_r2", None)["passed"]
        assert not evaluate("otoc_front_r2", float("nan"))["passed"]

    def test_check_unknown_criterion(self):
        with pytest.raises(ExperimentError):
            check_report({"criteria": [{"name": "made_up", "value": 1.0}]})
