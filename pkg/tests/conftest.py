import numpy as np
import pytest

from dnlsqp.disorder import Distribution, sample
from dnlsqp.lattice import Box, Dims
from dnlsqp.solver import SolverConfig, solve

DESK_SEED = 2024


@pytest.fixture(scope="session")
def desk_pot():
    return sample(Distribution(), Box.cube(1, 24), DESK_SEED)


@pytest.fixture(scope="session")
def desk_config():
    return SolverConfig(Dims(1, 1), [0.1], [(0,)], eps=1e-3, delta=1e-3, p=1, M=4, box_cap=16)


@pytest.fixture(scope="session")
def desk_solution(desk_config, desk_pot):
    return solve(desk_config, desk_pot)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
