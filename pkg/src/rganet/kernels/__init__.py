"""Hot convolution kernels.

The compiled extension (``rganet.kernels._ckernels``) is used when it was
built; otherwise the numpy reference in ``_numpy`` is used. Set
``RGANET_KERNELS=numpy`` to force the fallback.
"""
import os

from . import _numpy

_fallback = _numpy

if os.environ.get("RGANET_KERNELS", "").lower() == "numpy":
    _impl = _fallback
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _fallback

BACKEND = _impl.BACKEND
im2col = _impl.im2col
col2im = _impl.col2im
depthwise_forward = _impl.depthwise_forward
depthwise_backward = _impl.depthwise_backward


def available_backends():
    names = ["numpy"]
    try:
        from . import _ckernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name):
    if name == "numpy":
        return _fallback
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
