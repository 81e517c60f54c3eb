"""Collects outcomes of tests marked ``criterion(number, label)`` and prints one
PASS/FAIL line per criterion at the end of the session."""
import pytest

_outcomes: dict = {}
_labels: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, label): acceptance criterion this test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, label = mark.args
    _labels[number] = label
    failed = report.failed or (report.when == "call" and report.skipped)
    _outcomes[number] = _outcomes.get(number, True) and not failed


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        status = "PASS" if _outcomes[number] else "FAIL"
        terminalreporter.write_line(f"{status} criterion {number}: {_labels[number]}")
