import contextlib
import io
import numpy as np
import pytest

from conftest import ARTIFACTS, cli
from fiberspec.config import RunConfig, load_config, loads_config
from fiberspec.exceptions import ValidationError
from fiberspec.io import read_kv, read_predictions, write_cube, write_kv
from fiberspec.spectra import HyperCube, WavelengthGrid


def _quiet(*argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = cli(*argv)
    return code, buf.getvalue()


# --- configuration --------------------------------------------------------

def test_config_unknown_key_rejected():
    with pytest.raises(ValidationError, match="unknown config key"):
        loads_config("seed = 1\nlearning_rate = 0.1\n")


def test_config_bad_value_rejected():
    with pytest.raises(ValidationError):
        loads_config("max_epochs = many\n")
    with pytest.raises(ValidationError):
        loads_config("quantile = 1.5\n")


def test_config_flags_override_file(tmp_path):
    write_kv(tmp_path / "c.txt", {"seed": 3, "quantile": 0.9, "block": 3})
    cfg = load_config(tmp_path / "c.txt", {"seed": 11, "quantile": None})
    assert (cfg.seed, cfg.quantile, cfg.block) == (11, 0.9, 3)


def test_config_dump_round_trip():
    cfg = RunConfig(seed=4, hidden=(50, 40), lr=0.01, split_ratios=(0.5, 0.25, 0.25))
    assert loads_config(cfg.dumps()) == cfg


def test_train_config_defaults_per_model():
    cfg = RunConfig()
    clf, ae = cfg.train_config("classifier"), cfg.train_config("autoencoder")
    assert (clf.batch_size, clf.lr_factor) == (128, 0.2)
    assert (ae.batch_size, ae.lr_factor) == (16, 0.5)
    assert RunConfig(batch_size=7).train_config("autoencoder").batch_size == 7


# --- exit codes -------------------------------------------------------------

def test_unknown_subcommand_exits_1(tmp_path, capsys):
    assert cli("frobnicate", "--out", tmp_path) == 1
    assert "error" in capsys.readouterr().err


def test_missing_subcommand_exits_1(capsys):
    assert cli() == 1


def test_missing_input_exits_2_and_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert cli("train-classifier", "--manifest", missing, "--out", tmp_path / "o") == 2
    assert str(missing) in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_unknown_config_key_exits_1(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("colour = red\n")
    assert cli("synth", "--config", tmp_path / "c.txt", "--out", tmp_path / "o") == 1
    assert "colour" in capsys.readouterr().err


def test_truncated_cube_exits_2(tmp_path, capsys):
    cube = HyperCube(np.full((5, 5, 8), 0.5), WavelengthGrid(990.0, 1700.0, 8))
    write_cube(tmp_path / "c.hdr", cube)
    raw = tmp_path / "c.raw"
    raw.write_bytes(raw.read_bytes()[:-8])
    assert cli("preprocess", "--input", tmp_path / "c.hdr", "--out", tmp_path / "o") == 2


def test_dark_without_white_exits_1(tmp_path, capsys):
    cube = HyperCube(np.full((5, 5, 8), 0.5), WavelengthGrid(990.0, 1700.0, 8))
    write_cube(tmp_path / "c.hdr", cube)
    assert cli("preprocess", "--input", tmp_path / "c.hdr", "--dark", tmp_path / "c.hdr",
               "--out", tmp_path / "o") == 1


# --- cube preprocessing -----------------------------------------------------

def test_cube_preprocess_with_references(tmp_path):
    rng = np.random.default_rng(0)
    grid = WavelengthGrid(990.0, 1700.0, 20)
    dark = np.full((10, 10, 20), 100.0)
    white = np.full((10, 10, 20), 4100.0)
    refl = 0.5 + 0.1 * np.sin(np.linspace(0, 3, 20)) + rng.normal(0, 0.01, (10, 10, 20))
    raw = dark + refl * (white - dark)
    for name, data in (("raw", raw), ("dark", dark), ("white", white)):
        write_cube(tmp_path / f"{name}.hdr", HyperCube(data, grid))
    code, out = _quiet("preprocess", "--input", tmp_path / "raw.hdr", "--dark",
                       tmp_path / "dark.hdr", "--white", tmp_path / "white.hdr",
                       "--label", "C1", "--object-id", "obj", "--sg-window", "5",
                       "--out", tmp_path / "o")
    assert code == 0 and "kept: 4" in out
    text = (tmp_path / "o/spectra.csv").read_text().splitlines()
    assert len(text) == 5 and text[1].startswith("obj,C1,")
    assert read_kv(tmp_path / "o/run_config.txt")["sg_window"] == "5"


def test_dark_cube_reported_as_excluded(tmp_path):
    write_cube(tmp_path / "d.hdr", HyperCube(np.full((5, 5, 12), 0.01),
                                             WavelengthGrid(990.0, 1700.0, 12)))
    code, out = _quiet("preprocess", "--input", tmp_path / "d.hdr", "--object-id", "blk",
                       "--sg-window", "5", "--out", tmp_path / "o")
    assert code == 0 and "excluded object blk" in out


# --- small end-to-end runs ---------------------------------------------------

@pytest.mark.parametrize("artifact", ARTIFACTS)
def test_rerun_is_byte_identical(small_runs, artifact):
    a = (small_runs / "r1" / artifact).read_bytes()
    assert a and a == (small_runs / "r2" / artifact).read_bytes()


def test_threshold_file_and_detection_report(small_runs):
    info = read_kv(small_runs / "r1/a/threshold.txt")
    assert float(info["threshold"]) > 0 and info["target"] == "C1"
    table = read_predictions(small_runs / "r1/d/predictions.csv")
    assert table.kind == "detection"
    assert set(table.pred_labels) <= {"C1", "non-target"}
    rows = (small_runs / "r1/de/per_class.csv").read_text().splitlines()
    assert rows[0].startswith("label,") and any(r.startswith("P1 [D5],") for r in rows)


def test_run_config_echoed(small_runs):
    cfg = read_kv(small_runs / "r1/c/run_config.txt")
    assert cfg["command"] == "train-classifier" and cfg["seed"] == "5"
    assert cfg["max_epochs"] == "3"


# --- full benchmark (shared with the acceptance suite) ---------------------

@pytest.mark.slow
def test_benchmark_classifier_object_accuracy(benchmark):
    for split in ("test", "D2", "D3"):
        summary = read_kv_summary(benchmark.path(f"eval-{split}", "summary.txt"))
        assert float(summary["object accuracy"].rstrip("%")) >= 99.0, split


@pytest.mark.slow
def test_benchmark_detection_report(benchmark):
    assert benchmark.path("ae", "threshold.txt").exists()
    rows = benchmark.path("eval-detect", "per_class.csv").read_text().splitlines()
    assert len(rows) == 1 + 13


def read_kv_summary(path):
    out = {}
    for line in path.read_text().splitlines():
        if ":" in line:
            key, value = line.split(":", 1)
            out[key.strip()] = value.strip()
    return out




@pytest.mark.slow
def test_benchmark_validation_pixel_accuracy(benchmark, tmp_path):
    code, _ = _quiet("classify", "--model", benchmark.path("clf", "classifier.ckpt"),
                     "--manifest", benchmark.path("split", "manifest.csv"), "--split", "val",
                     "--out", tmp_path / "val")
    assert code == 0
    table = read_predictions(tmp_path / "val/predictions.csv")
    assert np.mean(np.array(table.true_labels) == np.array(table.pred_labels)) >= 0.99
