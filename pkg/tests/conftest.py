import functools

import pytest
from hypothesis import HealthCheck, settings

from twinchain.scenario import Scenario
from twinchain.simulation import run_simulation

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def cached_run(scenario: Scenario):
    """Runs are pure functions of the scenario, so test modules share them."""
    return run_simulation(scenario)


@pytest.fixture(scope="session")
def run_cache():
    return cached_run


@pytest.fixture(scope="session")
def short_run():
    return cached_run(Scenario(duration_s=300.0, seed=3))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(capsys):
    """Record and echo one pass/fail line for an acceptance criterion."""
    def _report(label: str, passed: bool, detail: str) -> bool:
        line = f"CRITERION {label}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return passed
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
