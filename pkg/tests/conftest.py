import numpy as np
import pytest

from deepaec import backend


@pytest.fixture(params=sorted(backend.available_backends()))
def kernel_backend(request):
    """Run the decorated test once per available conv backend."""
    previous = backend.current_backend()
    backend.set_backend(request.param)
    yield request.param
    backend.set_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
