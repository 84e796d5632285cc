import pytest

from ddfabc.harness import reference_run
from ddfabc.scene import SimConfig

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def default_sim() -> SimConfig:
    return SimConfig()


@pytest.fixture(scope="session")
def default_reference(default_sim):
    """Oversized-grid reference probe series for the default scene (computed once)."""
    return reference_run(default_sim).trace()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
