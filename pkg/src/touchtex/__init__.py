"""Tactile texture fields: sensor patch ingest, quilting, field fitting and baking."""
from .kernels import available_backends, get_backend, set_backend

__version__ = "0.1.0"

__all__ = ["available_backends", "get_backend", "set_backend", "__version__"]
