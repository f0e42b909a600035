import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from periodlattice import lattice
from periodlattice.systems import builtin_system

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("ci", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("ci")

CHAMPAGNE_START = np.pi / 4


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def champagne():
    return builtin_system("champagne-bottle")


@pytest.fixture(scope="session")
def champagne_loop():
    return lattice.circle_loop([0.0, 0.0], 0.2, 64, start_angle=CHAMPAGNE_START)


@pytest.fixture(scope="session")
def champagne_start(champagne, champagne_loop):
    p = champagne.point_on_fiber(champagne_loop.samples[0])
    return lattice.detect_lattice_basis(champagne, p)


@pytest.fixture(scope="session")
def champagne_monodromy(champagne, champagne_loop, champagne_start):
    return lattice.monodromy(champagne, champagne_loop, champagne_start)


@pytest.fixture
def announce(capsys):
    """Print a line to the terminal even while pytest captures output."""

    def emit(line):
        with capsys.disabled():
            print(f"\n{line}", flush=True)

    return emit
