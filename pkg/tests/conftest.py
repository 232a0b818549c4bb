import numpy as np
import pytest

from blowup_lab.cli import reference_pair
from blowup_lab.conditions import NormConfig, admissible_correction
from blowup_lab.propagator import CauchyPair
from blowup_lab.scaling import ScalingLaw
from blowup_lab.spectral import build_table
from blowup_lab.transference import build_transference

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def table():
    return build_table()


@pytest.fixture(scope="session")
def tm(table):
    return build_transference(table)


def make_law(nu, tau0=10.0):
    return ScalingLaw(nu, tau0, allow_large_nu=True)


@pytest.fixture(scope="session")
def law_half():
    return make_law(0.5)


@pytest.fixture(scope="session")
def law_third():
    return make_law(1 / 3)


@pytest.fixture(scope="session")
def generic_pair(table):
    return reference_pair(table)


def admissible_pair(table, law, amplitude=1.0, x0d=0.0):
    pair = reference_pair(table, amplitude)
    pair = admissible_correction(table, NormConfig.from_law(law), law.nu, pair)["corrected"]
    return CauchyPair(table.state(x0d, pair.x0.x), pair.x1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
