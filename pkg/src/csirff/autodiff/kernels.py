"""Backend selection for the hot kernels (convolution unfold, GELU).

The compiled extension is used when it imports; set ``CSIRFF_PURE_PYTHON=1``
to force the numpy implementation.
"""
import os

from . import _pykernels

if os.environ.get("CSIRFF_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im
gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward
