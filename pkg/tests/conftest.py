"""Collects acceptance verdicts and prints them after the run.

pytest captures stdout of passing tests, so the per-criterion lines are
also gathered here and repeated in the terminal summary.
"""

ACCEPTANCE_LINES: list[str] = []


def record(line: str) -> None:
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("#")[1].split()[0])):
            terminalreporter.write_line(line)
