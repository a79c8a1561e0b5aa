import numpy as np
import pytest

from codedqueue.channel import VOIP_GE_PARAMETERS, ChannelModel
from codedqueue.optimizer import voip_traffic


@pytest.fixture(scope="session")
def voip_ge():
    return ChannelModel.gilbert_elliott(**VOIP_GE_PARAMETERS)


@pytest.fixture(scope="session")
def voip_bsc():
    return ChannelModel.bsc(0.1)


@pytest.fixture(scope="session")
def traffic():
    return voip_traffic()


def random_ge_channels(n, seed):
    """Gilbert-Elliott channels with parameters spread over the open unit interval."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        a, b = rng.uniform(0.02, 0.98, 2)
        eg, eb = np.sort(rng.uniform(0.001, 0.6, 2))
        out.append(ChannelModel.gilbert_elliott(a, b, eg, eb))
    return out
