import pytest

_LINES: dict[int, str] = {}


class Verdict:
    def __init__(self, number: int):
        self.number = number

    def __call__(self, ok: bool, detail: str) -> None:
        line = f"criterion {self.number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES[self.number] = line
        print(line)
        assert ok, line


@pytest.fixture
def verdict(request):
    return Verdict(request.node.get_closest_marker("criterion").args[0])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_LINES):
            terminalreporter.write_line(_LINES[n])
