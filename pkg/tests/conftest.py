"""Shared pytest plumbing.

Tests marked @pytest.mark.criterion(n, "label") are the acceptance gate;
after the run we print one PASS/FAIL line per criterion so the gate can be
read off the terminal without digging through the pytest report.
"""

import pytest

_RESULTS: dict[tuple[int, str], bool] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(number, label): acceptance criterion coverage"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    key = (marker.args[0], marker.args[1])
    if report.when == "call":
        _RESULTS[key] = report.passed and _RESULTS.get(key, True)
    elif report.failed:  # setup/teardown error counts as failure
        _RESULTS[key] = False


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for (number, label), passed in sorted(_RESULTS.items()):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number} ({label}): {status}")
