import json

import numpy as np
import pytest
from PIL import Image

from mtpose.synthetic import write_synthetic_dataset

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def synthetic_manifest(tmp_path):
    """Factory: write an n-sample synthetic dataset and return its manifest path."""

    def make(n=3, seed=0, with_object=0, name="data"):
        return write_synthetic_dataset(tmp_path / f"{name}_{n}_{seed}", n, seed=seed, with_object=with_object)

    return make


@pytest.fixture
def write_manifest_file(tmp_path):
    """Factory: write arbitrary manifest entries next to a small PNG."""

    def make(entries, image_name="img.png", size=(32, 32)):
        Image.fromarray(np.zeros((size[1], size[0], 3), dtype=np.uint8)).save(tmp_path / image_name)
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(entries))
        return path

    return make


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker and report.when == "call":
        _ACCEPTANCE.append((marker, report.outcome, report.duration))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is not None:
        report.acceptance = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    grouped = {}
    for (number, title), outcome, duration in _ACCEPTANCE:
        ok, total = grouped.get((number, title), (True, 0.0))
        grouped[(number, title)] = (ok and outcome == "passed", total + duration)
    terminalreporter.section("acceptance criteria")
    for (number, title), (ok, duration) in sorted(grouped.items()):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {title} ({duration:.2f}s)")
