"""Collects the acceptance verdicts and prints them after the run, one line each."""

import pytest

VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        VERDICTS.append(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
        print(VERDICTS[-1])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
