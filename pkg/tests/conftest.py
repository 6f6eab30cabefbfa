import numpy as np
import pytest

from pwgpe.basis import field_from_real_vector, make_basis
from pwgpe.model import Problem, make_potential


def random_real_field(basis, rng, decay=1.0):
    """Seeded real field with mildly decaying coefficients."""
    vec = rng.standard_normal(basis.n_real) / (1.0 + basis.real_k2) ** (decay / 2.0)
    return field_from_real_vector(basis, vec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def flat_problem():
    """V = 0, cubic defocusing: the ground state is the exact constant."""
    return Problem(d=1, a0=1.0, mu=1.0, V=make_potential(1, "zero"))


@pytest.fixture(scope="session")
def linear_problem():
    return Problem(d=1, a0=1.0, mu=0.0, V=make_potential(1, "zero"))


@pytest.fixture(scope="session")
def cosine_problem():
    return Problem(d=1, a0=1.0, mu=1.0, V=make_potential(1, "cosine"))


@pytest.fixture(scope="session")
def rough_problem():
    """Small rough-tail problem, cheap enough for unit tests."""
    V = make_potential(
        1, "rough",
        {"amplitude": 0.8, "sigma": 1.5, "k_knee": 4, "k_max": 48, "seed": 7},
    )
    return Problem(d=1, a0=1.0, mu=1.0, V=V)


@pytest.fixture(scope="session")
def basis8():
    return make_basis(1, 8)
