import numpy as np
import pytest

from rdplab.probability import JointPmf


def random_joint(rng, names, sizes):
    total = int(np.prod(sizes))
    return JointPmf(tuple(names), rng.dirichlet(np.ones(total)).reshape(sizes))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
