import numpy as np
import pytest

from chanprobe.core import ChannelDataset
from chanprobe.synth import ScenarioConfig, generate_rpe


def complex_gaussian(m, n, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) * scale / np.sqrt(2)


def random_covariance(n, seed=0, rank=None):
    rng = np.random.default_rng(seed)
    r = n if rank is None else rank
    a = rng.standard_normal((n, r)) + 1j * rng.standard_normal((n, r))
    c = a @ a.conj().T / r
    return 0.5 * (c + c.conj().T)


@pytest.fixture(scope="session")
def rpe_small():
    """10^4 samples from the default scenario (shared across test modules)."""
    return generate_rpe(ScenarioConfig(seed=7), 10_000)


@pytest.fixture
def small_ds():
    return ChannelDataset(complex_gaussian(400, 4, seed=3))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
