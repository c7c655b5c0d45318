"""Hot-kernel dispatch: compiled Cython core when available, numpy fallback.

Set ``STONEVIEW_BACKEND=python`` to force the fallback (used by the
benchmark and by CI environments without a compiler); ``compiled`` to fail
loudly when the extension is missing.
"""

import os

import numpy as np

from . import _kernels_py

_requested = os.environ.get("STONEVIEW_BACKEND", "auto").strip().lower()

if _requested in ("auto", ""):
    try:
        from . import _kernels_cy as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"
elif _requested == "compiled":
    from . import _kernels_cy as _impl
    BACKEND = "compiled"
elif _requested == "python":
    _impl = _kernels_py
    BACKEND = "python"
else:
    raise ValueError(f"unknown STONEVIEW_BACKEND {_requested!r}")


def _c(a):
    return np.ascontiguousarray(a)


def im2col(x, kh, kw, stride, pad):
    return _impl.im2col(_c(x), kh, kw, stride, pad)


def col2im(cols, x_shape, kh, kw, stride, pad):
    return _impl.col2im(_c(cols), tuple(x_shape), kh, kw, stride, pad)


def maxpool2d_forward(x, k, stride, pad):
    return _impl.maxpool2d_forward(_c(x), k, stride, pad)


def maxpool2d_backward(dy, idx, x_shape, k, stride, pad):
    return _impl.maxpool2d_backward(_c(dy), _c(idx), tuple(x_shape), k, stride, pad)
