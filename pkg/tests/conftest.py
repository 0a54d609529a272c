import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from deception_qcd.harness.config import ExperimentConfig

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def case_config():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def case(case_config):
    return case_config.build()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def unicycle(case):
    return case.case


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
