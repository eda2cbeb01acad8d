import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np
import pytest

from ha2ha.phantom import PhantomSpec, VesselSpec


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    """64x64x16 phantom with one vessel, cheap enough for unit tests."""
    vessel = VesselSpec(start=(4.0, 30.0), end=(40.0, 34.0), radius=4.0, peak_velocity=0.012)
    return PhantomSpec(
        n_axial=64, n_lateral=64, n_frames=16, vessels=(vessel,), noise_strip_rows=12, seed=3
    )


_VERDICTS: dict = {}


@pytest.fixture
def verdict():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[k])


@pytest.fixture(scope="session")
def desk_experiment(tmp_path_factory):
    """Default-config experiment (training, held-out phantom, DC sweep), run
    once per session. Returns (report, cfg, out_dir, timings)."""
    import time

    from ha2ha.config import ExperimentConfig
    from ha2ha.experiment import run_experiment

    cfg = ExperimentConfig()
    out = tmp_path_factory.mktemp("desk")
    marks = {"start": time.perf_counter()}

    def log(msg):
        if msg.startswith("evaluating") and "trained" not in marks:
            marks["trained"] = time.perf_counter()

    report = run_experiment(cfg, out, log=log)
    marks["end"] = time.perf_counter()
    timings = {
        "train_s": marks["trained"] - marks["start"],
        "total_s": marks["end"] - marks["start"],
    }
    return report, cfg, out, timings
