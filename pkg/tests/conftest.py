import numpy as np
import pytest

from data.roads import RoadSegment
from tests.helpers import make_segment


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def straight_segment():
    return make_segment()


@pytest.fixture
def curved_segment():
    return RoadSegment(
        id=1,
        length=240.0,
        curvature_knots=((0.0, 0.0), (60.0, 0.02), (120.0, -0.015), (180.0, 0.01), (240.0, 0.0)),
        width_knots=((0.0, 3.4), (120.0, 3.2), (240.0, 3.5)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
