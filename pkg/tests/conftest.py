import numpy as np
import pytest

from gptpu.runtime import Runtime


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def runtime():
    rt = Runtime(devices=2)
    yield rt
    rt.close()
