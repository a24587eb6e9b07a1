"""Kernel backend selection.

The compiled extension is preferred; the numpy fallback is used when it is
not built or when ``MCENSEMBLE_BACKEND=python`` is set.  ``use()`` switches at
runtime (tests and the benchmark run both).
"""

import contextlib
import importlib
import os

from . import _fallback

_BACKENDS = {"python": _fallback}
try:
    _BACKENDS["cython"] = importlib.import_module("mcensemble._kernels")
except ImportError:
    pass

_requested = os.environ.get("MCENSEMBLE_BACKEND", "auto").lower()
if _requested == "auto":
    _active = "cython" if "cython" in _BACKENDS else "python"
elif _requested in _BACKENDS:
    _active = _requested
else:
    raise ImportError(f"MCENSEMBLE_BACKEND={_requested!r} is not available; have {sorted(_BACKENDS)}")


def available():
    return sorted(_BACKENDS)


def name():
    return _active


def kernels():
    return _BACKENDS[_active]


def set_backend(which):
    global _active
    if which not in _BACKENDS:
        raise ValueError(f"backend {which!r} not available; have {available()}")
    _active = which


@contextlib.contextmanager
def use(which):
    previous = _active
    set_backend(which)
    try:
        yield _BACKENDS[which]
    finally:
        set_backend(previous)
