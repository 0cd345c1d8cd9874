import numpy as np
import pytest

import decaylab as dl


@pytest.fixture(scope="session")
def f2():
    return dl.power(2.0)


@pytest.fixture(scope="session")
def f3():
    return dl.power(3.0)


@pytest.fixture(scope="session")
def flin():
    return dl.linear()


@pytest.fixture(scope="session")
def fflat():
    return dl.flat_exponential()


@pytest.fixture(scope="session")
def flow2(f2):
    return dl.FlowMap(f2)


@pytest.fixture(scope="session")
def inv2(flow2):
    return dl.InverseFlow(flow2)


@pytest.fixture(scope="session")
def flow3(f3):
    return dl.FlowMap(f3)


@pytest.fixture(scope="session")
def inv3(flow3):
    return dl.InverseFlow(flow3)


@pytest.fixture(scope="session")
def wiggly_table():
    # strictly increasing sampled table covering (1e-4, 2]
    x = np.geomspace(1e-4, 2.0, 120)
    y = x**2 * (1.0 + 0.05 * np.sin(np.log(x)))
    return x, y
