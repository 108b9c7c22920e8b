"""Kernel dispatch: compiled extension when importable, numpy fallback otherwise.

Set ``OAAG_PURE_PYTHON=1`` in the environment to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("OAAG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def _c(x):
    return np.ascontiguousarray(x)


def lstm_forward(xw, wh, h0, c0):
    return _impl.lstm_forward(_c(xw), _c(wh), _c(h0), _c(c0))


def lstm_backward(dH, wh, h0, c0, H, C, G):
    return _impl.lstm_backward(_c(dH), _c(wh), _c(h0), _c(c0), _c(H), _c(C), _c(G))


def lcs_length(a, b):
    return _impl.lcs_length(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64))
