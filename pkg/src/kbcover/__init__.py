"""Kernel-based kriging nowcasting with dissimilarity-driven persistent coverage."""

from ._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
