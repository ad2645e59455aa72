import pytest

from eip7702sim.harness import run_phase1_install, setup_environment
from eip7702sim.state import ChainState


@pytest.fixture
def env():
    return setup_environment()


@pytest.fixture
def installed(env):
    receipt = run_phase1_install(env)
    assert receipt.tuples_applied[0].accepted
    return env


@pytest.fixture
def chain():
    return ChainState(1337)


def pytest_terminal_summary(terminalreporter):
    import sys

    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[number])
