import pytest

# criterion number -> list of (part, passed, detail), filled in by test_acceptance
ACCEPTANCE = {}


def record(n: int, part: str, passed: bool, detail: str = ""):
    ACCEPTANCE.setdefault(n, []).append((part, bool(passed), detail))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{name} {'ok' if good else 'FAILED'} ({info})" for name, good, info in parts)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
