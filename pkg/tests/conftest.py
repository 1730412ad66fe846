import numpy as np
import pytest

from levyarea import observables as ob
from levyarea import systems as sy


@pytest.fixture(scope="session")
def nh():
    return sy.nose_hoover(burn_in_time=200.0)


@pytest.fixture(scope="session")
def nh_traj(nh):
    # shared medium-length trajectory for structural (non-statistical) checks
    return sy.sample_measure(nh, nh.burn_in_time + 2000.0, 0.01, seed=5)


@pytest.fixture(scope="session")
def pair():
    return sy.nose_hoover_pair(burn_in_time=300.0)


@pytest.fixture(scope="session")
def pair_traj(pair):
    return sy.sample_measure(pair, pair.burn_in_time + 4000.0, 0.01, seed=11)


@pytest.fixture(scope="session")
def pair_basis(pair, pair_traj):
    gens, names = ob.default_generators(pair, degree=3)
    return ob.build_invariant_basis(pair, pair_traj, gens, count=4, names=names)


@pytest.fixture(scope="session")
def ou_rotation():
    return sy.OUSurrogate(np.array([[1.0, -1.0], [1.0, 1.0]]),
                          np.sqrt(2.0) * np.eye(2))


@pytest.fixture(scope="session")
def ou_traj(ou_rotation):
    return sy.simulate_ou(ou_rotation, 400_000, step=0.005, seed=21)
