import pytest

from wenorl.tape import available_backends


@pytest.fixture(params=available_backends())
def backend(request):
    """Run tape-touching tests under every installed kernel backend."""
    return request.param
