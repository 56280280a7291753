"""Backend selection for the row-wise compute kernels.

Two interchangeable implementations live here: a pure-numpy one and a
numba-compiled one.  ``CTDISTILL_BACKEND`` picks between them at import
time:

* ``auto`` (default): numba when importable, numpy otherwise
* ``numba``: require numba, fail loudly if it is missing
* ``numpy``: force the pure-numpy path

The two paths agree to within a few ulp (numba lowers exp/log/erf to libm,
numpy uses its own vectorized loops, and the two may round differently in
the last bit); each backend on its own is fully deterministic, which is
what the bitwise reproducibility guarantees are stated over.  Matrix
products are not routed through here on purpose: BLAS already wins and is
bit-stable under the zero padding the encoder produces.
"""

import os

from ..errors import ConfigError
from . import numpy_backend

_requested = os.environ.get("CTDISTILL_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ConfigError(
        "CTDISTILL_BACKEND must be one of auto/numba/numpy, got %r" % _requested
    )

if _requested == "numpy":
    _impl = numpy_backend
    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise ConfigError(
                "CTDISTILL_BACKEND=numba but numba is not importable"
            )
        _impl = numpy_backend
        BACKEND = "numpy"

_gelu_fwd_raw = _impl.gelu_fwd
_gelu_bwd_raw = _impl.gelu_bwd

softmax_rows_fwd = _impl.softmax_rows_fwd
softmax_rows_bwd = _impl.softmax_rows_bwd
log_softmax_rows_fwd = _impl.log_softmax_rows_fwd
log_softmax_rows_bwd = _impl.log_softmax_rows_bwd
layer_norm_fwd = _impl.layer_norm_fwd
layer_norm_bwd = _impl.layer_norm_bwd


def gelu_fwd(x):
    # backends operate on flat arrays; preserve caller shape here
    return _gelu_fwd_raw(x.ravel()).reshape(x.shape)


def gelu_bwd(x, gy):
    return _gelu_bwd_raw(x.ravel(), gy.ravel()).reshape(x.shape)


__all__ = [
    "BACKEND",
    "softmax_rows_fwd",
    "softmax_rows_bwd",
    "log_softmax_rows_fwd",
    "log_softmax_rows_bwd",
    "layer_norm_fwd",
    "layer_norm_bwd",
    "gelu_fwd",
    "gelu_bwd",
]
