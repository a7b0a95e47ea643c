import pytest

from shockmaint.model import example_model

_VERDICTS = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance checks")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_VERDICTS):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def verdict():
    """Record one acceptance line; the test still asserts on its own."""
    def record(number, ok, detail=""):
        _VERDICTS.append((number, bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
    return record


@pytest.fixture(scope="session")
def ex1():
    return example_model(1)


@pytest.fixture(scope="session")
def ex2():
    return example_model(2)


@pytest.fixture(scope="session")
def ex3():
    return example_model(3)
