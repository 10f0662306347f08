import contextlib
import io
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fiberspec.cli import run
from fiberspec.io import write_kv
from fiberspec.synth import SyntheticSpec, spec_to_kv

settings.register_profile("fiberspec", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fiberspec")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


REPO = Path(__file__).resolve().parents[1]
DESK_SPEC = REPO / "configs" / "desk_synth.txt"


def cli(*argv) -> int:
    return run([str(a) for a in argv])


@dataclass
class BenchmarkRun:
    """Artifacts of one full CLI run on the checked-in synthetic spec."""

    root: Path
    preprocess_stdout: str
    classifier_seconds: float
    autoencoder_seconds: float

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)


@pytest.fixture(scope="session")
def benchmark(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    capture = io.StringIO()
    t0 = time.perf_counter()
    with contextlib.redirect_stdout(capture):
        assert cli("synth", "--spec", DESK_SPEC, "--out", root / "synth") == 0
        mark = capture.tell()
        assert cli("preprocess", "--manifest", root / "synth/manifest.csv",
                   "--out", root / "pre") == 0
        pre_out = capture.getvalue()[mark:]
        assert cli("split", "--manifest", root / "pre/manifest.csv", "--out", root / "split") == 0
        manifest = root / "split/manifest.csv"
        assert cli("train-classifier", "--manifest", manifest, "--out", root / "clf") == 0
        for split in ("test", "D2", "D3"):
            assert cli("classify", "--model", root / "clf/classifier.ckpt", "--manifest", manifest,
                       "--split", split, "--out", root / f"classify-{split}") == 0
            assert cli("evaluate", "--predictions", root / f"classify-{split}/predictions.csv",
                       "--manifest", manifest, "--out", root / f"eval-{split}") == 0
        t1 = time.perf_counter()
        assert cli("train-autoencoder", "--manifest", manifest, "--out", root / "ae") == 0
        assert cli("detect", "--model", root / "ae/autoencoder.ckpt",
                   "--manifest", root / "ae/eval_manifest.csv", "--out", root / "detect") == 0
        assert cli("evaluate", "--predictions", root / "detect/predictions.csv",
                   "--manifest", root / "ae/eval_manifest.csv", "--out", root / "eval-detect") == 0
        t2 = time.perf_counter()
    return BenchmarkRun(root, pre_out, t1 - t0, t2 - t1)


SMALL = replace(SyntheticSpec(), n_per_class=50, n_d2_per_class=25, n_d3_per_class=25,
                n_d4=75, n_d5_per_class=25, n_d6=25)


def _small_pipeline(root, spec_path, cfg_path):
    steps = [
        ("synth", "--spec", spec_path, "--out", root / "s"),
        ("preprocess", "--manifest", root / "s/manifest.csv", "--out", root / "p"),
        ("split", "--manifest", root / "p/manifest.csv", "--out", root / "sp"),
        ("train-classifier", "--manifest", root / "sp/manifest.csv", "--out", root / "c"),
        ("classify", "--model", root / "c/classifier.ckpt", "--manifest", root / "sp/manifest.csv",
         "--out", root / "cl"),
        ("evaluate", "--predictions", root / "cl/predictions.csv", "--out", root / "ev"),
        ("train-autoencoder", "--manifest", root / "sp/manifest.csv", "--out", root / "a"),
        ("detect", "--model", root / "a/autoencoder.ckpt", "--manifest",
         root / "a/eval_manifest.csv", "--out", root / "d"),
        ("evaluate", "--predictions", root / "d/predictions.csv", "--manifest",
         root / "a/eval_manifest.csv", "--out", root / "de"),
    ]
    for step in steps:
        with contextlib.redirect_stdout(io.StringIO()):
            assert cli(*step, "--config", cfg_path) == 0, step


ARTIFACTS = ["s/spectra.csv", "p/spectra.csv", "sp/manifest.csv", "c/classifier.ckpt",
             "c/history.csv", "cl/predictions.csv", "ev/summary.txt", "ev/per_class.csv",
             "a/autoencoder.ckpt", "a/threshold.txt", "d/predictions.csv",
             "de/summary.txt", "de/re_histogram.svg"]


@pytest.fixture(scope="session")
def small_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    write_kv(root / "spec.txt", spec_to_kv(SMALL))
    write_kv(root / "cfg.txt", {"seed": 5, "max_epochs": 3})
    for name in ("r1", "r2"):
        _small_pipeline(root / name, root / "spec.txt", root / "cfg.txt")
    return root


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict = {}


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE[number] = (title, passed, detail)
    print(f"criterion {number} ({title}): {'PASS' if passed else 'FAIL'} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  "
                                    f"{title}: {detail}")
