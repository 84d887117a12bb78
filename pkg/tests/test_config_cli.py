"""Configuration validation, hashing, and CLI behavior including bitwise
reproducibility of rerun outputs."""

import json

import numpy as np
import pytest

from nshom.cli import main, parse_fraction
from nshom.config import ConfigError, RunConfig, load_config


class TestRunConfig:
    def test_minimal_config_gets_defaults(self):
        rc = RunConfig.from_dict({"alpha": 1.5})
        assert rc.n == 256
        assert rc.kernel_mode == "periodized"
        assert rc.data["v_preset"] == "cos2pi_y_times_cos2pi_tau"

    def test_hash_deterministic_and_order_invariant(self):
        a = RunConfig.from_dict({"alpha": 1.5, "grid": {"n": 64}, "T": 0.5})
        b = RunConfig.from_dict({"T": 0.5, "grid": {"n": 64}, "alpha": 1.5})
        assert a.config_hash == b.config_hash
        assert a.config_hash == RunConfig.from_dict(json.loads(a.canonical_json())).config_hash

    def test_hash_changes_with_content(self):
        a = RunConfig.from_dict({"alpha": 1.5})
        b = RunConfig.from_dict({"alpha": 1.25})
        assert a.config_hash != b.config_hash

    @pytest.mark.parametrize("alpha", [1.0, 2.0, 2.5, 0.3])
    def test_alpha_out_of_range_rejected(self, alpha):
        with pytest.raises(ConfigError, match="alpha"):
            RunConfig.from_dict({"alpha": alpha})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown configuration key 'alpa'"):
            RunConfig.from_dict({"alpa": 1.5})
        with pytest.raises(ConfigError, match="grid.m"):
            RunConfig.from_dict({"grid": {"m": 10}})

    def test_nonzero_mean_potential_rejected(self):
        with pytest.raises(ConfigError, match="zero"):
            RunConfig.from_dict({"v_preset": "one_plus_cos"})

    def test_zero_mean_potential_accepted(self):
        rc = RunConfig.from_dict({"v_preset": "cos2pi_y_times_cos2pi_tau"})
        assert rc.v_spec().name == "cos2pi_y_times_cos2pi_tau"

    def test_unknown_presets_rejected(self):
        with pytest.raises(ConfigError, match="potential preset"):
            RunConfig.from_dict({"v_preset": "mystery"})
        with pytest.raises(ConfigError, match="theta preset"):
            RunConfig.from_dict({"theta_preset": {"name": "mystery", "params": {}}})

    def test_dt_rule_resolution(self):
        rc = RunConfig.from_dict({"T": 1.0})
        dt, n_steps = rc.resolve_dt(eps=0.125)
        assert dt <= 0.125 / 8.0 + 1e-15
        assert n_steps * dt == pytest.approx(1.0, rel=1e-14)
        rc_fixed = RunConfig.from_dict({"dt_rule": {"kind": "fixed", "dt": 0.3}})
        dt, n_steps = rc_fixed.resolve_dt()
        assert n_steps == 4 and dt == pytest.approx(0.25)

    def test_dt_rule_variants_validated(self):
        with pytest.raises(ConfigError, match="dt_rule"):
            RunConfig.from_dict({"dt_rule": {"kind": "fixed"}})
        with pytest.raises(ConfigError, match="dt_rule"):
            RunConfig.from_dict({"dt_rule": {"kind": "eps_over", "factor": 8,
                                             "default_dt": 0.01, "bogus": 1}})

    def test_load_config_roundtrip(self, tmp_path):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({"alpha": 1.25, "grid": {"n": 32}}))
        rc = load_config(cfg_path)
        assert rc.alpha == 1.25 and rc.n == 32
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(bad)


class TestCliBasics:
    def test_parse_fraction(self):
        assert parse_fraction("1/2") == 0.5
        assert parse_fraction("0.25") == 0.25
        assert parse_fraction(" 1/16 ") == 0.0625

    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_missing_required_flag_is_usage_error(self, capsys):
        assert main(["simulate"]) == 1  # --system required
        assert main(["simulate", "--system", "het"]) == 1  # --eps required for het

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"alpha": 5.0}))
        assert main(["coefficients", "--config", str(bad)]) == 2
        assert "alpha" in capsys.readouterr().err

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0


class TestCliCommands:
    def _small_cfg(self, tmp_path, **overrides):
        data = {"alpha": 1.5, "grid": {"n": 32},
                "cell": {"m": 32, "m_tau": 2, "n_images": 4},
                "T": 0.25, "dt_rule": {"kind": "fixed", "dt": 1.0 / 32.0}}
        data.update(overrides)
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(data))
        return p

    def test_coefficients_stdout_constant_theta(self, tmp_path, capsys):
        cfg = self._small_cfg(tmp_path)
        assert main(["coefficients", "--config", str(cfg)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["xi1"] == 1.0
        assert abs(payload["xi2"]) < 1e-8
        assert abs(payload["xi3"]) < 1e-8
        assert payload["kernel_mode"] == "periodized"

    def test_cell_outputs(self, tmp_path, capsys):
        cfg = self._small_cfg(tmp_path)
        out = tmp_path / "cellout"
        assert main(["cell", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "chi.csv").exists()
        assert (out / "xi.csv").exists()
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["chi_l2"] < 1e-10
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "cell"
        assert "config_hash" in manifest

    def test_simulate_writes_series_and_snapshots(self, tmp_path):
        cfg = self._small_cfg(tmp_path)
        out = tmp_path / "sim"
        assert main(["simulate", "--system", "het", "--eps", "1/4",
                     "--seed", "7", "--config", str(cfg), "--out", str(out)]) == 0
        norms = np.loadtxt(out / "norms.csv", delimiter=",", skiprows=1)
        assert norms.shape[1] == 4
        snaps = sorted(out.glob("snap_*.csv"))
        assert snaps
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seeds"] == [7]
        assert manifest["parameters"]["system"] == "het"

    def test_simulate_rerun_reproduces_outputs_bitwise(self, tmp_path):
        cfg = self._small_cfg(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main(["simulate", "--system", "eff", "--seed", "3",
                         "--config", str(cfg), "--out", str(out)]) == 0
        for f1 in sorted(out1.glob("*.csv")):
            f2 = out2 / f1.name
            assert f1.read_bytes() == f2.read_bytes(), f1.name

    def test_rerun_from_manifest_config(self, tmp_path):
        # the manifest's embedded config is sufficient to reproduce the run
        cfg = self._small_cfg(tmp_path)
        out1 = tmp_path / "orig"
        assert main(["simulate", "--system", "eff", "--seed", "5",
                     "--config", str(cfg), "--out", str(out1)]) == 0
        manifest = json.loads((out1 / "manifest.json").read_text())
        cfg2 = tmp_path / "from_manifest.json"
        cfg2.write_text(json.dumps(manifest["config"]))
        out2 = tmp_path / "redo"
        seed = manifest["seeds"][0]
        assert main(["simulate", "--system", "eff", "--seed", str(seed),
                     "--config", str(cfg2), "--out", str(out2)]) == 0
        assert (out1 / "norms.csv").read_bytes() == (out2 / "norms.csv").read_bytes()

    def test_sweep_outputs_and_single_eps_degenerate_fit(self, tmp_path):
        cfg = self._small_cfg(tmp_path)
        out = tmp_path / "sweep"
        assert main(["sweep", "--eps", "1/2", "--paths", "2",
                     "--config", str(cfg), "--out", str(out)]) == 0
        fit = json.loads((out / "fit.json").read_text())
        assert fit["degenerate"] is True
        table = np.loadtxt(out / "sweep.csv", delimiter=",", skiprows=1, ndmin=2)
        assert table.shape[0] == 1
        header = (out / "sweep.csv").read_text().splitlines()[0]
        assert header.split(",")[:3] == ["eps", "strong_err", "strong_se"]

    def test_sweep_multi_eps(self, tmp_path):
        cfg = self._small_cfg(tmp_path, dt_rule={"kind": "eps_over", "factor": 8,
                                                 "default_dt": 0.0078125})
        out = tmp_path / "sweep2"
        assert main(["sweep", "--eps", "1/2,1/4", "--paths", "2",
                     "--config", str(cfg), "--out", str(out)]) == 0
        table = np.loadtxt(out / "sweep.csv", delimiter=",", skiprows=1, ndmin=2)
        assert table.shape[0] == 2
        assert table[1, 1] < table[0, 1]  # strong error decreases

    def test_sweep_numerical_failure_exit_code(self, tmp_path, capsys):
        # explicit stepping at a coarse fixed dt diverges every path, the
        # exclusion policy trips, and the CLI maps it to exit code 3
        cfg = self._small_cfg(tmp_path, grid={"n": 48}, theta_scheme=0.0, T=0.5,
                              dt_rule={"kind": "fixed", "dt": 1.0 / 32.0})
        out = tmp_path / "failed_sweep"
        with pytest.warns(UserWarning, match="diverged"):
            code = main(["sweep", "--eps", "1/2,1/4", "--paths", "2",
                         "--config", str(cfg), "--out", str(out)])
        assert code == 3
        assert "excluded" in capsys.readouterr().err
        # the partial report is still written for inspection
        assert (out / "sweep.csv").exists()

    def test_validate_passes_and_dumps_matrices(self, tmp_path, capsys):
        cfg = self._small_cfg(tmp_path)
        dump = tmp_path / "mats"
        assert main(["validate", "--config", str(cfg),
                     "--dump-matrices", str(dump)]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out
        mat = np.loadtxt(dump / "fractional_generator.csv", delimiter=",")
        assert mat.shape == (32, 32)
        assert np.max(np.abs(mat - mat.T)) < 1e-12
