import numpy as np
import pytest

from gridtariff import ieee14
from gridtariff.powerflow import solve_newton


@pytest.fixture(scope="session")
def case14():
    return ieee14()


@pytest.fixture(scope="session")
def sol14(case14):
    return solve_newton(case14)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ---------------------------------------------------------
# Tests marked ``criterion(n, title)`` are grouped by ``n``; a criterion passes
# only if every test carrying its number passes.  One line per criterion is
# printed at the end of the session.

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "failed": []})
    if not rep.passed and item.name not in entry["failed"]:
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "FAIL" if e["failed"] else "PASS"
        tail = f"  [failed: {', '.join(e['failed'])}]" if e["failed"] else ""
        terminalreporter.write_line(f"criterion {n}: {status} - {e['title']}{tail}")
