import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spanpc import kernels

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    with kernels.using(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def dataset_dirs():
    env = os.environ.get("SPANPC_DATA_DIR")
    dirs = [Path(env)] if env else []
    root = Path(__file__).resolve().parent.parent
    return dirs + [root / "data", Path.home() / "data", Path("/data")]


def find_dataset(name):
    """First directory that ``load_binary_dataset(d, name)`` can read, or None."""
    for d in dataset_dirs():
        if all((d / f"{name}.{s}.data").is_file() or (d / name / f"{name}.{s}.data").is_file()
               for s in ("train", "valid", "test")):
            return d
    return None


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
