import pytest

from exhaustible_mfg.coupler import solve_mfg
from exhaustible_mfg.model import canonical_model


@pytest.fixture(scope="session")
def canonical():
    return canonical_model()


@pytest.fixture(scope="session")
def canonical_solution(canonical):
    return solve_mfg(canonical)


@pytest.fixture(scope="session")
def coarse_solution():
    return solve_mfg(canonical_model(nx=50, nt=100))
