import numpy as np
import pytest

from sqclbm.lattice import equilibrium


def random_populations(rng, n, noise=5e-4, speed=0.05):
    """Positive near-equilibrium populations, shape (n, 9)."""
    rho = rng.uniform(0.9, 1.1, n)
    angle = rng.uniform(0, 2 * np.pi, n)
    mag = rng.uniform(0, speed, n)
    u = mag[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    f = equilibrium(rho, u) + rng.normal(0, noise, (n, 9))
    assert np.all(f > 0)
    return f


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
