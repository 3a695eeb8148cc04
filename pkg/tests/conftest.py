import pytest

ACCEPTANCE: dict[int, tuple[bool, str]] = {}
CRITERIA = range(1, 10)


@pytest.fixture
def record():
    """Store one PASS/FAIL line for an acceptance criterion."""

    def _record(n: int, ok: bool, detail: str):
        ACCEPTANCE[n] = (bool(ok), detail)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in CRITERIA:
        ok, detail = ACCEPTANCE.get(n, (False, "not run"))
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
