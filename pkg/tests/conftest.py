"""Per-criterion summary for the acceptance suite.

Tests tagged ``@pytest.mark.acceptance("AC-n")`` are collected here and
reported as one PASS/FAIL line each at the end of the run. A test can attach
the measured quantity with ``record_property("detail", ...)``.
"""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(tag): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    tag = marker.args[0]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(item.user_properties).get("detail", "")
        _RESULTS[tag] = (report.passed, detail, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(_RESULTS, key=lambda t: int(t.split("-")[1])):
        passed, detail, duration = _RESULTS[tag]
        line = f"{tag}: {'PASS' if passed else 'FAIL'} ({duration:.1f} s)"
        terminalreporter.write_line(f"{line} {detail}".rstrip())
