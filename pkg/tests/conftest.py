import numpy as np
import pytest

from twomatrix.potentials import PotentialSpec
from twomatrix.two_matrix import Resolution, solve


@pytest.fixture(scope="session")
def case_one_coarse():
    return solve(PotentialSpec.quadratic(0.0, 1.0), Resolution.preset("coarse"))


@pytest.fixture(scope="session")
def case_one_default():
    return solve(PotentialSpec.quadratic(0.0, 1.0), Resolution.preset("default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


def record_acceptance(number: int, passed: bool, detail: str) -> str:
    line = f"ACCEPTANCE {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
