import pytest

from vnembed.model import SubstrateNetwork, VnRequest
from vnembed.pathgen import DualPrices


# running-example fixture: substrate a..e = 0..4, one virtual link whose
# end nodes see candidate sets {a, c} and {b, d, e}
PRICING_GAMMA = {(0, 1): 2.0, (1, 4): 5.0, (1, 3): 2.0, (0, 2): 3.0, (2, 3): 4.0}
PRICING_SIGMA = {(0, 0): 1.0, (0, 2): 3.0}
PRICING_TAU = {(1, 1): 1.5, (1, 3): 2.0, (1, 4): 3.0}


@pytest.fixture
def pricing_sn():
    big = 10 ** 6
    return SubstrateNetwork(
        nodes=[(0, big, 0.0, 0.0), (1, big, 10.0, 0.0), (2, big, 0.0, 10.0),
               (3, big, 10.0, 10.0), (4, big, 20.0, 0.0)],
        links=[(0, 1, big), (1, 4, big), (1, 3, big), (0, 2, big), (2, 3, big)],
    )


@pytest.fixture
def pricing_vn():
    return VnRequest(
        nodes=[(0, 5, 0.0, 5.0, 6.0), (1, 5, 15.0, 5.0, 10.0)],
        links=[(0, 1, 5)],
    )


@pytest.fixture
def pricing_prices():
    return DualPrices(lam={}, mu={(0, 1): 12.0}, eta={}, gamma=dict(PRICING_GAMMA),
                      sigma=dict(PRICING_SIGMA), tau=dict(PRICING_TAU))


@pytest.fixture
def box_sn():
    """Five substrate nodes on a 100-unit grid, one of them just off the box edge."""
    return SubstrateNetwork(
        nodes=[
            (0, 50, 0.0, 0.0),
            (1, 20, 100.0, 0.0),
            (2, 50, 100.0, 100.0),
            (3, 10, 0.0, 100.0),
            (4, 99, 0.0, 100.5),
        ],
        links=[(0, 1, 30), (1, 2, 40), (2, 3, 30), (0, 3, 20), (0, 2, 25), (3, 4, 10)],
    )


@pytest.fixture
def box_vn():
    """Three-node chain whose location boxes exercise every candidate rule."""
    return VnRequest(
        nodes=[
            (0, 20, 10.0, 10.0, 100.0),
            (1, 30, 0.0, 0.0, 100.0),
            (2, 5, 0.0, 0.0, 100.0),
        ],
        links=[(0, 1, 10), (1, 2, 5)],
    )


@pytest.fixture
def line_sn():
    return SubstrateNetwork(
        nodes=[(0, 50, 0.0, 0.0), (1, 40, 10.0, 0.0), (2, 30, 20.0, 0.0)],
        links=[(0, 1, 25), (1, 2, 20)],
    )


@pytest.fixture
def line_vn():
    return VnRequest(
        nodes=[(0, 20, 0.0, 0.0, 1000.0), (1, 10, 20.0, 0.0, 1000.0)],
        links=[(0, 1, 10)],
    )
