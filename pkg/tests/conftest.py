import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from streamnar.checkpoint import preset  # noqa: E402

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by this test")


def pytest_runtest_logreport(report):
    name = getattr(report, "criterion", None)
    if name is None:
        return
    ok = _criteria.get(name, True)
    if report.failed or (report.when == "call" and report.skipped):
        ok = False
    _criteria[name] = ok


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in _criteria.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")


@pytest.fixture(scope="session", params=["transformer", "conformer"])
def tiny_model(request):
    return preset("tiny", seed=3, variant=request.param)


@pytest.fixture(scope="session")
def tiny_transformer():
    return preset("tiny", seed=3, variant="transformer")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
