import numpy as np
import pytest


@pytest.fixture(autouse=True)
def _no_numpy_warn_spam():
    with np.errstate(all="ignore"):
        yield
