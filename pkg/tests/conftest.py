import pytest

from ecrflow.flow import IntegratorConfig

# filled by test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES = []


@pytest.fixture
def tight():
    return IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14, event_tol=1e-10)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
