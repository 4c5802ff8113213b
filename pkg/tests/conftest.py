import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mrppsel.data import LabeledSample  # noqa: E402
from mrppsel.perm import build_plan  # noqa: E402

_ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): numbered acceptance criterion")


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(label, ok, detail=""):
        _ACCEPTANCE.append((label, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")


@pytest.fixture
def standard_sample():
    """Two groups of 5, six variables, the first two shifted.

    Small enough that the 252 labelings are enumerated exactly.
    """
    rng = np.random.default_rng(20240601)
    X = rng.normal(size=(10, 6))
    X[5:, :2] += 1.5
    return LabeledSample(X, np.repeat([0, 1], 5))


@pytest.fixture
def standard_plan(standard_sample):
    plan = build_plan(standard_sample.labels, 1000, 0)
    assert plan.mode == "exhaustive" and plan.B == 252
    return plan


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
