import pytest

# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ou1d():
    from response_forecast import experiments
    return experiments.testbed("ou1d")


@pytest.fixture(scope="session")
def ou2d():
    from response_forecast import experiments
    return experiments.testbed("ou2d")
