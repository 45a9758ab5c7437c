"""Kernel dispatch.

The compiled extension ``odmn._ckernels`` is used when it was built; otherwise
the interpreted versions in ``odmn._pykernels`` are used. Setting the
environment variable ``ODMN_PURE_PYTHON=1`` forces the fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("ODMN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def scatter_add_rows(out, ids, grad):
    """``out[ids[i]] += grad[i]`` for every i, accumulating repeated ids."""
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    if out.dtype != np.float64 or not out.flags.c_contiguous:
        raise TypeError("out must be a C-contiguous float64 array")
    _impl.scatter_add_rows(out, ids, grad)
    return out


def abs_area(x, d):
    """Exact integral of ``|d|`` for a piecewise-linear function sampled at ``x``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    d = np.ascontiguousarray(d, dtype=np.float64)
    return float(_impl.abs_area(x, d))
