"""Shared fixtures and the acceptance-criterion reporter.

Criterion results are printed in the terminal summary (outside pytest's
capture) so `pytest -v` always shows one pass/fail line per criterion.
"""

from __future__ import annotations

_CRITERIA: list[tuple[str, bool, str]] = []


def record_criterion(cid: str, passed: bool, detail: str) -> None:
    _CRITERIA.append((cid, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid, passed, detail in sorted(_CRITERIA):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{cid}: {status} - {detail}")
