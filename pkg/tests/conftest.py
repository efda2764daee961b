"""Acceptance bookkeeping: ``@pytest.mark.criterion(n)`` tags a test with criterion ``n``.

A criterion passes when every test tagged with it ran and passed. Expected
failures count as failures, so a criterion that is known to be out of reach
stays visible in the summary without turning the run red.
"""

from collections import defaultdict

import pytest

CRITERIA = {
    1: "c_max exactness",
    2: "battery-life reproduction",
    3: "period table within 0.5% (fit constants)",
    4: "duty-cycle invariant across the batch matrix",
    5: "PDR grows with C",
    6: "hop count vs delay and throughput",
    7: "three-parent sensors reach PDR >= 0.97",
    8: "property suites",
    9: "airtime oracle",
}

_outcomes: dict[int, list[str]] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): test backs acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marks = [m.args[0] for m in item.iter_markers("criterion")]
    if not marks:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if hasattr(report, "wasxfail"):
            verdict = "xfail"
        elif report.skipped:
            verdict = "skipped"
        else:
            verdict = report.outcome
        for n in marks:
            _outcomes[n].append(verdict)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        seen = _outcomes.get(n)
        if not seen:
            status = "NOT RUN"
        elif all(v == "passed" for v in seen):
            status = "PASS"
        elif "xfail" in seen:
            status = "FAIL (expected)"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status:<15} {title}")
