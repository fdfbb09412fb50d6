"""Fully convolutional ball detector with confidence-map decoding."""

from .kernels import active_backend, available_backends, set_backend

__version__ = "0.1.0"

__all__ = ["active_backend", "available_backends", "set_backend", "__version__"]
