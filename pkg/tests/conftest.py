"""Shared pytest hooks: collects one verdict line per acceptance criterion."""
import pytest

_REPORT: dict[int, str] = {}


class Report:
    def record(self, number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        _REPORT[number] = line
        print(line)
        return passed


@pytest.fixture(scope="session")
def acceptance():
    return Report()


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_REPORT):
        terminalreporter.write_line(_REPORT[number])
