import pytest

_LINES = []


@pytest.fixture
def report():
    """Record a criterion line; all lines are printed in the terminal summary."""
    def add(line):
        _LINES.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    return request.param
