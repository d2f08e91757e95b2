import re
import warnings

import pytest

from optoprep.dynamics import TruncationLeakWarning

_CRITERIA = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = re.match(r"test_c(\d+)_(.+)", item.name)
        if m and item.module.__name__.endswith("test_acceptance"):
            _CRITERIA[item.nodeid] = (int(m.group(1)), m.group(2).replace("_", " "))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.nodeid in _CRITERIA and (rep.when == "call" or rep.failed or rep.skipped):
        prev = item.config.stash.get(_RESULTS, {})
        status = "PASS" if rep.passed and rep.when == "call" else ("SKIP" if rep.skipped else "FAIL")
        if prev.get(item.nodeid) in (None, "PASS"):
            prev[item.nodeid] = status
        item.config.stash[_RESULTS] = prev


_RESULTS = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (num, label) in sorted(_CRITERIA.items(), key=lambda kv: kv[1][0]):
        if nodeid in results:
            terminalreporter.write_line(f"{results[nodeid]} C{num:02d} {label}")


@pytest.fixture(autouse=True)
def _quiet_leak_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationLeakWarning)
        yield
