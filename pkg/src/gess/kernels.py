"""Backend selection for the hot kernels.

The compiled ``_kernels`` extension is used when it imports; otherwise the numpy
twin in ``_pykernels`` is used. Set ``GESS_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from gess import _pykernels

_compiled = None
if not os.environ.get("GESS_PURE_PYTHON"):
    try:
        from gess import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pykernels


def available_backends():
    """Return ``{name: module}`` for every importable backend."""
    out = {"python": _pykernels}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d(x, weight, bias, stride=1, padding=0):
    return _impl.conv2d(_f64(x), _f64(weight), _f64(bias), int(stride), int(padding))


def nms(scores, radius):
    return _impl.nms(_f64(scores), int(radius))


def nearest_neighbors(a, b):
    """Index of and squared distance to the nearest row of ``b`` for each row of ``a``."""
    return _impl.nearest_neighbors(_f64(a), _f64(b))


def bilinear_sample(fmap, xy):
    return _impl.bilinear_sample(_f64(fmap), _f64(xy).reshape(-1, 2))
