"""Shared fixtures and the per-criterion acceptance summary."""

import pytest

ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""

    def record(cid: str, ok: bool, detail: str) -> None:
        line = f"criterion {cid:>3}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[cid] = line
        print(line)
        assert ok, line

    return record


def _key(cid: str):
    digits = "".join(c for c in cid if c.isdigit())
    return (int(digits) if digits else 0, cid)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_LINES, key=_key):
        terminalreporter.write_line(ACCEPTANCE_LINES[cid])
