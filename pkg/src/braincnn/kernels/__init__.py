"""Kernel backend dispatch.

The numba path is the default; set BRAINCNN_NO_NUMBA=1 before import to
force the pure-numpy fallback.  Both backends satisfy identical contracts
and are cross-checked in the test suite; `backend_name` reports which one
is active.
"""

import os

_disable = os.environ.get("BRAINCNN_NO_NUMBA", "").lower() in ("1", "true", "yes")

if not _disable:
    try:
        from . import _numba_impl as _impl
        backend_name = "numba"
    except ImportError:
        from . import _numpy_impl as _impl
        backend_name = "numpy"
else:
    from . import _numpy_impl as _impl
    backend_name = "numpy"

conv2d = _impl.conv2d
conv2d_input_grad = _impl.conv2d_input_grad
conv2d_kernel_grad = _impl.conv2d_kernel_grad
maxpool2d = _impl.maxpool2d
maxpool2d_backward = _impl.maxpool2d_backward
