from __future__ import annotations

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_")
_results: dict[int, str] = {}


def pytest_runtest_logreport(report):
    match = _CRITERION.search(report.nodeid)
    if not match:
        return
    number = int(match.group(1))
    if report.failed:
        _results[number] = "FAIL"
    elif report.when == "call" and report.passed:
        _results.setdefault(number, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    from test_acceptance import TITLES

    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        terminalreporter.write_line(
            f"criterion {number:2d} {_results[number]}  {TITLES[number]}")
