import pytest

# criterion id -> (passed, detail); filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        tr.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
