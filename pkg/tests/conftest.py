import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from _oracles import small_dataset  # noqa: E402


@pytest.fixture(scope="session")
def dataset_d5():
    return small_dataset(T=150, d=5, seed=21, coefs={0: 2.0, 3: -1.5})


@pytest.fixture(scope="session")
def dataset_d8():
    return small_dataset(T=200, d=8, seed=8, coefs={1: 2.2, 4: -2.0})


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
