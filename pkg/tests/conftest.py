"""Shared pytest wiring.

Prints a one-line verdict per acceptance test at the end of the run so the
acceptance checklist is visible even in quiet mode.
"""

_ACCEPTANCE_FILE = "test_acceptance.py"
_collected: list[tuple[str, str, float]] = []


def pytest_runtest_logreport(report):
    if _ACCEPTANCE_FILE not in report.nodeid:
        return
    name = report.nodeid.split("::", 1)[1]
    if report.when == "call":
        _collected.append((name, report.outcome, report.duration))
    elif report.when == "setup" and report.outcome != "passed":
        # Skips and setup errors never reach the call phase.
        _collected.append((name, report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _collected:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, duration in _collected:
        word = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{word:5s} {name} ({duration:.2f}s)")
