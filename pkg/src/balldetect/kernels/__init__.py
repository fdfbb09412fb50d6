"""Kernel backend selection.

Two interchangeable implementations of the hot kernels exist:

* ``native`` — compiled Cython extension (im2col + BLAS, float64
  accumulation), built by setup.py;
* ``numpy`` — pure-Python fallback with the same numerics.

The native backend covers the convolution kernels that dominate runtime;
everything else always runs through the numpy implementation.  Selection
happens at import: native when the extension imported, else numpy.  The
``BALLDETECT_KERNELS`` environment variable (``auto``/``native``/``numpy``)
or :func:`set_backend` override it.
"""

import os

from . import numpy_backend

try:
    from . import _native
except ImportError:
    _native = None

_NATIVE_OPS = ("conv2d_forward", "conv2d_backward")


def available_backends():
    names = ["numpy"]
    if _native is not None:
        names.insert(0, "native")
    return names


def _resolve(name):
    if name == "auto":
        return "native" if _native is not None else "numpy"
    if name == "native" and _native is None:
        raise ValueError("native kernel backend requested but the compiled "
                         "extension is not available")
    if name not in ("native", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    return name


_active = _resolve(os.environ.get("BALLDETECT_KERNELS", "auto"))


def set_backend(name):
    """Switch the active backend; returns the previously active name."""
    global _active
    previous = _active
    _active = _resolve(name)
    return previous


def active_backend():
    return _active


def op(name):
    """Return the implementation of a kernel under the active backend."""
    if _active == "native" and name in _NATIVE_OPS:
        return getattr(_native, name)
    return getattr(numpy_backend, name)
