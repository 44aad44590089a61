"""Collects one pass/fail line per acceptance criterion and prints them at the end."""

ACCEPTANCE_RESULTS = {}
ACCEPTANCE_CRITERIA = range(1, 11)


def report(criterion, passed, detail):
    ACCEPTANCE_RESULTS[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    ran = [item for item in terminalreporter.stats.get("passed", [])
           + terminalreporter.stats.get("failed", [])
           if "test_acceptance" in getattr(item, "nodeid", "")]
    if not ran and not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in ACCEPTANCE_CRITERIA:
        if n in ACCEPTANCE_RESULTS:
            ok, detail = ACCEPTANCE_RESULTS[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
