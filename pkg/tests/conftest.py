"""Shared pytest hooks.

The acceptance battery records one verdict line per criterion; echoing them
from a terminal-summary hook keeps them visible even though pytest captures
output of passing tests at the file-descriptor level.
"""

criterion_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in criterion_lines:
            terminalreporter.write_line(line)
