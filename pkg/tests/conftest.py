import pytest

_LINES: list[str] = []


class Reporter:
    """Collects one verdict line per acceptance criterion plus free-form notes."""

    def __init__(self, capsys):
        self._capsys = capsys

    def _emit(self, line: str) -> None:
        _LINES.append(line)
        with self._capsys.disabled():
            print("\n" + line, end="")

    def verdict(self, criterion, ok: bool, detail: str) -> bool:
        self._emit(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    def note(self, criterion, text: str) -> None:
        self._emit(f"    [{criterion}] {text}")


@pytest.fixture
def report(capsys):
    return Reporter(capsys)


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _LINES:
        terminalreporter.write_line(line)
