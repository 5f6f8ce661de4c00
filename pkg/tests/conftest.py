import numpy as np
import pytest

from d2dcache import DemandProfile, MobilityProfile, Scenario, build_scenario


def uniform_mobility(L: int, T: int) -> MobilityProfile:
    return MobilityProfile(
        transitions=np.full((T, L, L), 1.0 / L),
        initial=np.full(L, 1.0 / L),
    )


def make_s1() -> Scenario:
    """The canonical two-user instance: p = (0.8, 0.6), meeting prob 0.5."""
    return build_scenario(
        sizes=[1.0],
        demand=[DemandProfile(np.array([[0.8]])), DemandProfile(np.array([[0.6]]))],
        mobility=[uniform_mobility(2, 1), uniform_mobility(2, 1)],
    )


def random_scenario(rng: np.random.Generator, N: int, M: int, L: int, T: int) -> Scenario:
    demand = [DemandProfile(rng.uniform(0.0, 1.0, (T, M))) for _ in range(N)]
    mobility = []
    for _ in range(N):
        trans = rng.uniform(0.05, 1.0, (T, L, L))
        trans /= trans.sum(axis=2, keepdims=True)
        init = rng.uniform(0.05, 1.0, L)
        init /= init.sum()
        mobility.append(MobilityProfile(transitions=trans, initial=init))
    sizes = rng.uniform(0.5, 2.0, M)
    return build_scenario(sizes=sizes, demand=demand, mobility=mobility)


def random_sized_scenario(rng: np.random.Generator, max_users: int = 8) -> Scenario:
    N = int(rng.integers(2, max_users + 1))
    M = int(rng.integers(1, 4))
    L = int(rng.integers(2, 5))
    T = int(rng.integers(1, 5))
    return random_scenario(rng, N, M, L, T)


@pytest.fixture
def s1() -> Scenario:
    return make_s1()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260810)
