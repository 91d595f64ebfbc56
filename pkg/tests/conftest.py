import numpy as np
import pytest

from msffnet.autodiff import get_precision, set_precision


@pytest.fixture(autouse=True)
def _restore_precision():
    mode = get_precision()
    yield
    set_precision(mode)


@pytest.fixture
def f64():
    set_precision("float64")
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
