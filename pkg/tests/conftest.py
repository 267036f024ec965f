import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one line per end-to-end acceptance check after the run."""
    mod = sys.modules.get("test_acceptance") \
        or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "ACCEPT_LINES", None) if mod else None
    if not lines:
        return
    terminalreporter.write_sep("-", "acceptance checks")
    for name, ok, detail in lines:
        terminalreporter.write_line(
            f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
