import json
from pathlib import Path

import pytest

from qtt.cli import main, rerun_from_manifest
from qtt.manifest import load_manifest, sha256_file

CHEAP_CONFIG = {
    "pair_rate_cps": 2e5,
    "acquisition_time_s": 1.0,
    "eta_herald": 0.4,
    "alice": {"eta_spec": 0.9, "eta_det": 0.6, "dead_time_ns": 84.0,
              "jitter_det_ps": 287.0, "jitter_tt_ps": 4.0},
    "bob": {"attenuation_db": -13.0, "background_cps": 1e5, "dead_time_ns": 84.0,
            "jitter_det_ps": 287.0, "jitter_tt_ps": 4.0},
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "cheap.json"
    path.write_text(json.dumps(CHEAP_CONFIG))
    return path


def run(*argv):
    return main([str(a) for a in argv])


def digests(out_dir, names):
    return {name: sha256_file(Path(out_dir) / name) for name in names}


class TestSimulate:
    def test_produces_result_and_histogram(self, tmp_path, config_path):
        out = tmp_path / "run"
        assert run("simulate", "--config", config_path, "--seed", 3, "--out", out) == 0
        result = json.loads((out / "result.json").read_text())
        assert result["success"] is True
        assert 300 < result["sigma_tau_ps"] < 520
        header = (out / "histogram.csv").read_text().splitlines()[0]
        assert header == "bin_center_ps,count"
        manifest = load_manifest(out)
        assert set(manifest["outputs"]) == {"histogram.csv", "result.json"}

    def test_reference_scenario_width(self, tmp_path):
        out = tmp_path / "ref"
        assert run("simulate", "--seed", 4, "--out", out) == 0
        result = json.loads((out / "result.json").read_text())
        assert result["success"] is True
        assert result["sigma_tau_ps"] == pytest.approx(400.0, abs=30.0)

    def test_same_seed_byte_identical(self, tmp_path, config_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        run("simulate", "--config", config_path, "--seed", 5, "--out", out1)
        run("simulate", "--config", config_path, "--seed", 5, "--out", out2)
        names = ["histogram.csv", "result.json"]
        assert digests(out1, names) == digests(out2, names)

    def test_missing_field_exits_2_with_name(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        data = {k: v for k, v in CHEAP_CONFIG.items() if k != "acquisition_time_s"}
        bad.write_text(json.dumps(data))
        assert run("simulate", "--config", bad, "--out", tmp_path / "x") == 2
        assert "acquisition_time_s" in capsys.readouterr().err

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(dict(CHEAP_CONFIG, rate=1)))
        assert run("simulate", "--config", bad, "--out", tmp_path / "x") == 2
        assert "rate" in capsys.readouterr().err


class TestSweepCommand:
    def test_single_cell_grid(self, tmp_path, config_path):
        out = tmp_path / "grid"
        code = run("sweep", "--config", config_path, "--seed", 1, "--out", out,
                   "--attenuations-db=-13", "--backgrounds-cps=1e5", "--trials", 3)
        assert code == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "attenuation_db,background_cps,p_success,mean_n_true"
        assert len(lines) == 2

    def test_jobs_do_not_change_bytes(self, tmp_path, config_path):
        outs = []
        for jobs, name in ((1, "j1"), (2, "j2")):
            out = tmp_path / name
            code = run("sweep", "--config", config_path, "--seed", 7, "--out", out,
                       "--jobs", jobs, "--attenuations-db=-13,-30",
                       "--backgrounds-cps=1e5", "--trials", 4)
            assert code == 0
            outs.append(digests(out, ["sweep.csv", "threshold.csv"]))
        assert outs[0] == outs[1]

    def test_rerun_from_manifest_reproduces_bytes(self, tmp_path, config_path):
        out = tmp_path / "orig"
        run("sweep", "--config", config_path, "--seed", 11, "--out", out,
            "--attenuations-db=-13,-30", "--backgrounds-cps=1e5", "--trials", 3)
        redo = tmp_path / "redo"
        assert rerun_from_manifest(out, redo) == 0
        names = ["sweep.csv", "threshold.csv"]
        assert digests(out, names) == digests(redo, names)


class TestAllanCommand:
    def test_writes_offsets_and_adev(self, tmp_path, config_path):
        out = tmp_path / "allan"
        code = run("allan", "--config", config_path, "--seed", 2, "--out", out,
                   "--n-acq", 8, "--clock-preset", "RbFS",
                   "--detector-preset", "SPAD", "--background", "nighttime")
        assert code == 0
        lines = (out / "adev.csv").read_text().splitlines()
        assert lines[0] == "tau_s,sigma_y"
        assert len(lines) >= 3

    def test_too_few_acquisitions_rejected(self, tmp_path, config_path, capsys):
        code = run("allan", "--config", config_path, "--out", tmp_path / "x",
                   "--n-acq", 1)
        assert code == 2
        assert "n-acq" in capsys.readouterr().err

    def test_unknown_preset_lists_valid(self, tmp_path, config_path, capsys):
        code = run("allan", "--config", config_path, "--out", tmp_path / "x",
                   "--clock-preset", "sundial")
        assert code == 2


class TestAnalyticCommand:
    def test_writes_threshold_and_ps_curves(self, tmp_path, config_path):
        out = tmp_path / "analytic"
        code = run("analytic", "--config", config_path, "--seed", 3, "--out", out,
                   "--attenuations-db=-16,-20,-24", "--backgrounds-cps=1e5,4e5",
                   "--calibration-trials", 2)
        assert code == 0
        ps = (out / "analytic_ps.csv").read_text().splitlines()
        assert len(ps) == 7
        th = (out / "analytic_threshold.csv").read_text().splitlines()
        assert th[0] == "background_cps,threshold_db_expansion,threshold_db_exact"
        assert len(th) == 3

    def test_zero_background_rejected(self, tmp_path, config_path, capsys):
        code = run("analytic", "--config", config_path, "--out", tmp_path / "x",
                   "--backgrounds-cps=0")
        assert code == 2


class TestFiberCommand:
    def test_zero_length_row_succeeds(self, tmp_path, config_path):
        out = tmp_path / "fiber"
        code = run("fiber", "--config", config_path, "--seed", 5, "--out", out,
                   "--lengths-km=0", "--trials", 3)
        assert code == 0
        lines = (out / "fiber.csv").read_text().splitlines()
        assert lines[0] == "length_km,attenuation_db,p_success,mean_n_true"
        assert lines[1].startswith("0.0,")
        assert ",1.0," in lines[1] or lines[1].split(",")[2] == "1"


class TestAoCommand:
    def test_curve_has_finite_values(self, tmp_path):
        out = tmp_path / "ao"
        code = run("ao", "--out", out, "--zenith-max-deg", 75, "--zenith-steps", 6)
        assert code == 0
        lines = (out / "ao.csv").read_text().splitlines()
        assert len(lines) == 7
        for line in lines[1:]:
            values = [float(v) for v in line.split(",")]
            assert all(v == v for v in values)  # no NaNs
            assert 0.0 < values[4] <= 1.0 and 0.0 < values[6] <= 1.0

    def test_bad_zenith_rejected(self, tmp_path, capsys):
        assert run("ao", "--out", tmp_path / "x", "--zenith-max-deg", 95) == 2


class TestExitCodes:
    def test_unknown_command(self):
        assert main(["frobnicate"]) == 2

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0
