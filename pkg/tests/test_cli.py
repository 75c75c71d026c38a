"""Command-line interface: exit codes, CSV layout and reproducibility."""
import csv
import subprocess
import sys

import pytest

from markerloc import __version__
from markerloc.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main, parse_config
from markerloc.errors import ConfigError
from markerloc.scene_sim import circular_placement, save_scene

SWEEP_INI = """
[scene]
layout = circular
marker_ids = 0 3 5 9 12 17 22
[noise]
pixel_sigma = 0.5
[sweep]
trials = 2
max_k = 3
[variances]
trials = 100
"""

TRACK_INI = """
[scene]
layout = ceiling_grid
[camera]
facing = up
z = 0.0
[track]
speed = 0.5
caps = all 1 3 5
models = adaptive, max, min
"""

NOISELESS_TRACK_INI = TRACK_INI + """
variance_table = estimate
[noise]
pixel_sigma = 0
[variances]
trials = 100
"""


def write(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def rows(path):
    with open(path) as f:
        return list(csv.DictReader(line for line in f if not line.startswith("#")))


def run(*args):
    return main([str(a) for a in args])


class TestSweep:
    def test_writes_csvs(self, tmp_path):
        cfg = write(tmp_path, SWEEP_INI)
        assert run("sweep", "--config", cfg, "--seed", 3, "--out", tmp_path / "o") == EXIT_OK
        text = (tmp_path / "o" / "sweep.csv").read_text().splitlines()
        assert text[0].startswith(f"# markerloc {__version__} config_sha256=")
        assert text[0].endswith("seed=3")
        assert text[1] == "k,subset_id,trial,err_x_cm,err_y_cm,err_theta_deg"
        assert len(rows(tmp_path / "o" / "sweep_summary.csv")) == 3

    def test_missing_scene_file(self, tmp_path, capsys):
        cfg = write(tmp_path, "[scene]\nlayout = file\nfile = nowhere/scene.csv\n")
        assert run("sweep", "--config", cfg, "--out", tmp_path) == EXIT_CONFIG
        assert "nowhere/scene.csv" in capsys.readouterr().err

    def test_scene_file(self, tmp_path):
        save_scene(circular_placement(), tmp_path / "scene.csv")
        cfg = write(tmp_path, SWEEP_INI.replace("layout = circular",
                                                "layout = file\nfile = scene.csv"))
        assert run("sweep", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK

    def test_missing_config(self, tmp_path, capsys):
        assert run("sweep", "--config", tmp_path / "none.ini") == EXIT_CONFIG
        assert "none.ini" in capsys.readouterr().err

    def test_runtime_failure(self, tmp_path):
        cfg = write(tmp_path, SWEEP_INI + "[camera]\nz = 0.4\n")
        assert run("sweep", "--config", cfg, "--out", tmp_path / "o") == EXIT_RUNTIME

    def test_reproducible(self, tmp_path):
        cfg = write(tmp_path, SWEEP_INI)
        run("sweep", "--config", cfg, "--seed", 9, "--out", tmp_path / "a")
        run("sweep", "--config", cfg, "--seed", 9, "--out", tmp_path / "b", "--threads", 3)
        run("sweep", "--config", cfg, "--seed", 10, "--out", tmp_path / "c")
        a = (tmp_path / "a" / "sweep.csv").read_bytes()
        assert a == (tmp_path / "b" / "sweep.csv").read_bytes()
        assert a != (tmp_path / "c" / "sweep.csv").read_bytes()


class TestVariances:
    def test_seven_rows(self, tmp_path):
        cfg = write(tmp_path, SWEEP_INI)
        assert run("variances", "--config", cfg, "--seed", 1, "--out", tmp_path) == EXIT_OK
        table = rows(tmp_path / "variances.csv")
        assert [r["n"] for r in table] == [str(n) for n in range(1, 8)]

    def test_insufficient_trials(self, tmp_path, capsys):
        cfg = write(tmp_path, SWEEP_INI.replace("trials = 100", "trials = 20"))
        assert run("variances", "--config", cfg, "--out", tmp_path) != EXIT_OK
        assert "insufficient trials" in capsys.readouterr().err


class TestTrack:
    def test_three_model_blocks(self, tmp_path):
        cfg = write(tmp_path, TRACK_INI)
        assert run("track", "--config", cfg, "--seed", 2, "--out", tmp_path) == EXIT_OK
        models = [r["model"] for r in rows(tmp_path / "tracking.csv")]
        blocks = [m for i, m in enumerate(models) if i == 0 or models[i - 1] != m]
        assert blocks == ["adaptive", "static-max", "static-min"]

    def test_empty_model_list(self, tmp_path):
        cfg = write(tmp_path, TRACK_INI.replace("models = adaptive, max, min", "models ="))
        assert run("track", "--config", cfg, "--out", tmp_path) != EXIT_OK

    def test_unknown_model(self, tmp_path):
        cfg = write(tmp_path, TRACK_INI.replace("max, min", "max, mode"))
        assert run("track", "--config", cfg, "--out", tmp_path) == EXIT_CONFIG

    def test_noiseless(self, tmp_path):
        cfg = write(tmp_path, NOISELESS_TRACK_INI)
        assert run("track", "--config", cfg, "--seed", 4, "--out", tmp_path) == EXIT_OK
        data = rows(tmp_path / "tracking.csv")
        assert data
        # CSV positions are in cm
        worst = max(max(abs(float(r["x_est"]) - float(r["x_true"])),
                        abs(float(r["y_est"]) - float(r["y_true"]))) for r in data) / 100
        assert worst < 1e-4

    def test_variance_table_file(self, tmp_path):
        (tmp_path / "table.csv").write_text(
            "n,var_x_cm2,var_y_cm2\n" + "".join(f"{n},{10 / n},{8 / n}\n" for n in range(1, 8)))
        cfg = write(tmp_path, TRACK_INI + "variance_table = table.csv\n")
        assert run("track", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK

    def test_reproducible_with_threads(self, tmp_path):
        cfg = write(tmp_path, TRACK_INI)
        run("track", "--config", cfg, "--seed", 5, "--out", tmp_path / "a")
        run("track", "--config", cfg, "--seed", 5, "--out", tmp_path / "b", "--threads", 2)
        for name in ("tracking.csv", "tracking_summary.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestConfigParsing:
    def test_defaults(self):
        cfg = parse_config("")
        assert len(cfg.scene) == 24
        assert cfg.sweep_trials == 200 and cfg.variance_trials == 200
        assert cfg.models == ("adaptive", "max", "min")
        assert cfg.trajectory == ()

    @pytest.mark.parametrize("text", [
        "[scene]\nlayout = hexagon\n",
        "[camera]\nfacing = sideways\n",
        "[track]\ncaps = 1 2 3\n",
        "[track]\ncorners = 0,0,0; 1,0,0\n",
        "[track]\nspeed = 0\n",
        "[sweep]\ntrials = 0\n",
        "[noise]\npixel_sigma = -1\n",
        "[scene]\nmarker_ids = 0 99\n",
        "not an ini file",
    ])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_hash_tracks_content(self):
        assert parse_config("").source_sha256 != parse_config("[sweep]\ntrials = 5\n").source_sha256

    def test_bad_seed(self, tmp_path):
        cfg = write(tmp_path, SWEEP_INI)
        assert run("sweep", "--config", cfg, "--seed", -1) == EXIT_CONFIG


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "markerloc", "--version"],
                         capture_output=True, text=True, check=True)
    assert __version__ in out.stdout
