import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("repo", deadline=None, derandomize=True)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion at the end of the run

_ACCEPTANCE = {}
_DETAILS = {}


@pytest.fixture
def detail(request):
    """Attach a short measurement string to the current acceptance criterion."""

    def set_detail(text):
        _DETAILS[request.node.nodeid] = text

    return set_detail


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or rep.failed:
        passed = rep.passed and rep.when == "call"
        prev = _ACCEPTANCE.get(number)
        if prev is None or not rep.passed:
            _ACCEPTANCE[number] = (title, passed, item.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, nodeid = _ACCEPTANCE[number]
        extra = _DETAILS.get(nodeid)
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{extra}]" if extra else ""))
