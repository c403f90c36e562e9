import numpy as np
import pytest

from shillab.dataset import RatingsDataset
from shillab.gan import Architecture
from shillab.synthetic import synthetic_ratings

SMALL_ARCH = Architecture(embed=(5, 7, 4), link=(6, 5, 3), readout=6, critic=(9, 7, 5))

ACCEPTANCE_LINES: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance checks")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synthetic():
    return synthetic_ratings(seed=0)


@pytest.fixture
def small_arch():
    return SMALL_ARCH


def make_dataset(rows):
    """Dataset from (user, item, rating) tuples with ids as given."""
    users = sorted({r[0] for r in rows}, key=str)
    items = sorted({r[1] for r in rows}, key=str)
    ui = {u: k for k, u in enumerate(users)}
    ii = {i: k for k, i in enumerate(items)}
    return RatingsDataset(
        users,
        items,
        np.array([ui[r[0]] for r in rows]),
        np.array([ii[r[1]] for r in rows]),
        np.array([r[2] for r in rows]),
    )
