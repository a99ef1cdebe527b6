import pytest

from helpers import make_manifest_doc, write_manifest_doc, write_take


@pytest.fixture
def tiny_manifest_path(tmp_path):
    take = write_take(tmp_path, "t0", [0, 1, 2, 0])
    return write_manifest_doc(tmp_path, make_manifest_doc(tmp_path, [take]))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; returns ``passed`` for asserting."""

    def report(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
