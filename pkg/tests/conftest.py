"""Collects the acceptance verdicts and prints them after the run."""

import pytest

VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records criterion n and fails the test when not ok."""

    def record(n: int, ok: bool, detail: str) -> None:
        VERDICTS[n] = (bool(ok), detail)
        print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    passed = sum(ok for ok, _ in VERDICTS.values())
    terminalreporter.write_line(f"{passed}/{len(VERDICTS)} criteria pass")
