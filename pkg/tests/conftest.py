import pytest

from causalphi.models.space import ProductSpace
from causalphi.services.distributions import make_rng
from helpers import random_system


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run preset-scale experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def space2():
    return ProductSpace.system(2, 2)


@pytest.fixture
def random_target(rng):
    return random_system(rng)
