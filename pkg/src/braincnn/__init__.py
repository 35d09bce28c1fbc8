"""braincnn: from-scratch CNN training engine for 4-class image
classification, with a numba-accelerated kernel backend."""

from .kernels import backend_name

__all__ = ["backend_name"]
__version__ = "0.1.0"
