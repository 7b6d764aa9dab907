import pytest

from critchaos.kernel import StarScaleParams, build_bump_profile


@pytest.fixture(scope="session")
def profile1():
    return build_bump_profile(1)


@pytest.fixture(scope="session")
def params():
    return StarScaleParams(eta1=0.25, eta2=1.0, dim=1)


@pytest.fixture(scope="session")
def params0():
    return StarScaleParams(eta1=0.0, eta2=1.0, dim=1)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
