import numpy as np
import pytest

from cropcast import _kernels


@pytest.fixture(params=["numpy", "numba"])
def backend(request):
    """Run a test under each kernel backend; numba is skipped if absent."""
    if request.param == "numba" and not _kernels._NB_OK:
        pytest.skip("numba not importable")
    prev = _kernels.active_backend()
    _kernels.set_backend(request.param)
    yield request.param
    _kernels.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
