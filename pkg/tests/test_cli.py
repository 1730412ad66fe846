import json
from pathlib import Path

import numpy as np
import pytest

from levyarea import cli
from levyarea import config as cf
from levyarea.errors import ConfigError


def write_config(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestConfig:
    def test_presets_valid(self):
        for name in cf.PRESET_NAMES:
            assert cf.preset(name).system

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="preset"):
            cf.preset("does-not-exist")

    def test_roundtrip(self, tmp_path):
        base = cf.preset("ou-oracle")
        path = write_config(tmp_path, cf.dump_config(base))
        back = cf.load_config(path)
        assert back.system == base.system
        assert np.array_equal(back.ou_gamma, base.ou_gamma)
        assert back.t_max == base.t_max

    def test_preset_plus_override(self, tmp_path):
        path = write_config(tmp_path, "\n".join([
            "[experiment]", "preset = ou-oracle",
            "[estimator]", "t_max = 7.5", "seed = 42",
        ]))
        config = cf.load_config(path)
        assert config.t_max == 7.5
        assert config.seed == 42
        assert config.system == "ou-oracle"

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, "[estimator]\nbogus = 1\n")
        with pytest.raises(ConfigError, match="bogus"):
            cf.load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = write_config(tmp_path, "[nonsense]\nx = 1\n")
        with pytest.raises(ConfigError, match="section"):
            cf.load_config(path)

    def test_bad_matrix_rejected(self, tmp_path):
        path = write_config(tmp_path, "[symmetry]\na_matrix = 1 q ; 0 1\n")
        with pytest.raises(ConfigError, match="a_matrix"):
            cf.load_config(path)

    def test_validation_gates(self):
        with pytest.raises(ConfigError, match="epsilon"):
            cf.ExperimentConfig(epsilons=(1.5,))
        with pytest.raises(ConfigError, match="t_max"):
            cf.ExperimentConfig(t_max=-1.0)
        with pytest.raises(ConfigError, match="target"):
            cf.ExperimentConfig(observable="construct")

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="read"):
            cf.load_config("/nonexistent/exp.ini")


class TestExitCodes:
    def test_no_config_is_exit_2(self, capsys):
        assert cli.main(["estimate"]) == 2

    def test_both_config_and_preset_is_exit_2(self, tmp_path):
        path = write_config(tmp_path, "[experiment]\npreset = ou-oracle\n")
        assert cli.main(["estimate", "--config", path,
                         "--preset", "ou-oracle"]) == 2

    def test_bad_config_file_is_exit_2(self, tmp_path):
        path = write_config(tmp_path, "[estimator]\nstep = -1\n")
        assert cli.main(["estimate", "--config", path]) == 2

    def test_construct_on_ou_is_exit_2(self, tmp_path):
        path = write_config(tmp_path, "\n".join([
            "[experiment]", "preset = ou-oracle",
            "[observable]", "observable = construct", "target = 1",
        ]))
        assert cli.main(["construct", "--config", path,
                         "--out", str(tmp_path)]) == 2

    def test_report_without_artifacts_is_exit_2(self, tmp_path):
        assert cli.main(["report", "--preset", "nose-hoover",
                         "--out", str(tmp_path)]) == 2


class TestCheckSymmetry:
    def test_nose_hoover_passes(self, tmp_path):
        assert cli.main(["check-symmetry", "--preset", "nose-hoover",
                         "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "symmetry_report.json").read_text())
        assert report["pass"]
        assert report["flow_reversal_residual"] <= 1e-10
        assert report["slow_a_residual"] <= 1e-10
        assert report["slow_b_residual"] <= 1e-10

    def test_misspecified_reversal_fails(self, tmp_path):
        path = write_config(tmp_path, "\n".join([
            "[experiment]", "preset = nose-hoover",
            "[symmetry]", "r_matrix = -1 0 0 ; 0 1 0 ; 0 0 1",
        ]))
        assert cli.main(["check-symmetry", "--config", path,
                         "--out", str(tmp_path)]) == 1
        report = json.loads((tmp_path / "symmetry_report.json").read_text())
        assert report["flow_reversal_residual"] > 0.1


class TestEstimate:
    def test_ou_oracle_run(self, tmp_path):
        assert cli.main(["estimate", "--preset", "ou-oracle",
                         "--out", str(tmp_path)]) == 0
        payload = json.loads((tmp_path / "estimate.json").read_text())
        sigma = np.array(payload["sigma_hat"])
        se = np.array(payload["se_sigma"])
        ref = np.array(payload["closed_form"]["sigma"])
        assert np.all(np.abs(sigma - ref) <= 3 * se + 1e-12)
        assert (tmp_path / "correlogram.csv").exists()
        assert (tmp_path / "plot.gp").exists()

    def test_seed_flag_changes_output(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        cli.main(["estimate", "--preset", "ou-oracle", "--out", str(a),
                  "--seed", "1"])
        cli.main(["estimate", "--preset", "ou-oracle", "--out", str(b),
                  "--seed", "2"])
        assert (a / "correlogram.csv").read_text() != \
            (b / "correlogram.csv").read_text()

    def test_reruns_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out, threads in ((a, "1"), (b, "8")):
            cli.main(["estimate", "--preset", "ou-oracle", "--out", str(out),
                      "--threads", threads])
        assert (a / "correlogram.csv").read_bytes() == \
            (b / "correlogram.csv").read_bytes()
        assert (a / "estimate.json").read_bytes() == \
            (b / "estimate.json").read_bytes()


SMALL_COMPARE = "\n".join([
    "[experiment]", "preset = section6-testbed",
    "[system]", "burn_in = 200",
    "[observable]", "calibration_duration = 600",
    "[estimator]", "duration = 2200", "t_max = 15",
    "[homogenise]", "epsilons = 0.2", "n_paths = 16", "sde_step = 0.005",
])


class TestCompare:
    @pytest.mark.slow
    def test_threads_byte_identical(self, tmp_path):
        # small ensembles: exercises plumbing and determinism, not statistics
        path = write_config(tmp_path, SMALL_COMPARE)
        a, b = tmp_path / "a", tmp_path / "b"
        for out, threads in ((a, "1"), (b, "4")):
            code = cli.main(["compare", "--config", path, "--out", str(out),
                             "--threads", threads])
            assert code in (0, 1)
        for name in ("fastslow_eps0p2.csv", "sde_eps0p2.csv",
                     "control_eps0p2.csv", "trend.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
        payload = json.loads((a / "compare_report.json").read_text())
        assert "0.2" in payload["epsilons"]


class TestReport:
    def test_summarizes_artifacts(self, tmp_path):
        cli.main(["estimate", "--preset", "ou-oracle", "--out", str(tmp_path)])
        assert cli.main(["report", "--preset", "ou-oracle",
                         "--out", str(tmp_path)]) == 0
        text = (tmp_path / "report.txt").read_text()
        assert "estimate.json" in text
        assert "sigma_hat" in text
