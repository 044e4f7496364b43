import numpy as np
import pytest

from latent_prior.backend import build_mock_backend
from latent_prior.schedule import build_linear_schedule


@pytest.fixture(scope="session")
def schedule():
    return build_linear_schedule()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_backend(schedule):
    return build_mock_backend("mock-pointmass", (4, 8, 8), schedule, target_seed=5)



def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
