import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from csirff.autodiff import _pykernels, functional  # noqa: E402

try:
    from csirff.autodiff import _ckernels
except ImportError:  # extension not built
    _ckernels = None

KERNEL_NAMES = ("im2col", "col2im", "gelu_forward", "gelu_backward")


@pytest.fixture(params=["python", "cython"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend by patching the functional module's kernels."""
    impl = _pykernels if request.param == "python" else _ckernels
    if impl is None:
        pytest.skip("compiled kernels not built")
    for name in KERNEL_NAMES:
        monkeypatch.setattr(functional, name, getattr(impl, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
