"""Backend selection for the hot kernels.

The compiled Cython module is used when it was built; otherwise the numpy
reference implementation is used. Set ``TOUCHTEX_BACKEND=python`` to force
the fallback.
"""
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

_NAMES = ("hash_encode", "hash_encode_backward", "rasterize_triangles",
          "min_cut_seam", "adam_update")


def _load_compiled():
    try:
        from . import _ckernels
    except ImportError as exc:
        log.debug("compiled kernels unavailable: %s", exc)
        return None
    return _ckernels


def get_backend(name=None):
    """Return the kernel module for ``name`` ('c' or 'python'), or the active one."""
    if name is None:
        return _active
    if name == "python":
        return _pykernels
    if name == "c":
        mod = _load_compiled()
        if mod is None:
            raise ImportError("touchtex._ckernels was not built")
        return mod
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    return ["python"] + (["c"] if _load_compiled() is not None else [])


def set_backend(name):
    """Switch the module-level kernel functions to another backend."""
    global _active, BACKEND
    _active = get_backend(name)
    BACKEND = name
    for fn in _NAMES:
        globals()[fn] = getattr(_active, fn)


_forced = os.environ.get("TOUCHTEX_BACKEND", "").strip().lower()
if _forced == "python" or _load_compiled() is None:
    set_backend("python")
else:
    set_backend("c")
