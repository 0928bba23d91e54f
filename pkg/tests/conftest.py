import pytest

from stpc.modring import Modulus
from stpc.rng import SeededRandom

Q256 = 2**255 + 95


@pytest.fixture
def rng(request):
    return SeededRandom(request.node.name, "tests")


@pytest.fixture(scope="session")
def q256():
    return Modulus(Q256)

