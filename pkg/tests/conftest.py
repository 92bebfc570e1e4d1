import numpy as np
import pytest

_RESULTS = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report():
    """record(number, title, passed, detail) for the acceptance summary."""
    def record(number, title, passed, detail):
        line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        _RESULTS.setdefault(number, []).append((passed, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        for _, line in _RESULTS[number]:
            terminalreporter.write_line(line)
