import pytest

from lossnet import reference_params


@pytest.fixture
def ref10():
    return reference_params(10)


@pytest.fixture
def ref50():
    return reference_params(50)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_line():
    """Record one PASS/FAIL line; the lines are replayed in the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
