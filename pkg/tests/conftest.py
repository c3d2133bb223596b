import numpy as np
import pytest

from elastoreg.mesh import build_rectangle_mesh

_criteria = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    item_marks = getattr(report, "criterion", None)
    if item_marks is not None:
        _criteria[item_marks[0]] = (item_marks[1], report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = mark.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        text, outcome = _criteria[num]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] #{num:<2d} {text}")


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def unit_mesh():
    return build_rectangle_mesh(4, 4, 1.0, 1.0, ("left",))


@pytest.fixture(scope="session")
def mixed_mesh():
    return build_rectangle_mesh(3, 2, 1.5, 1.0, ("left", "bottom"))
