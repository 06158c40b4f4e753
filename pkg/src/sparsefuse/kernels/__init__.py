"""Hot-loop kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly, unless the environment
variable ``SPARSEFUSE_DISABLE_NUMBA`` is set to a truthy value.  Both paths
implement identical semantics; results agree to floating-point reassociation.
"""
import os

from . import _numpy

_off = os.environ.get("SPARSEFUSE_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

if _off:
    _impl = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba missing
        _impl = _numpy
        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
dwconv2d_forward = _impl.dwconv2d_forward
dwconv2d_backward = _impl.dwconv2d_backward
nn_fill = _impl.nn_fill
idw_densify = _impl.idw_densify

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward",
    "dwconv2d_forward",
    "dwconv2d_backward",
    "nn_fill",
    "idw_densify",
]
