"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise the numpy
implementation in ``_pycore``.  ``FEYNSLICE_BACKEND=python`` forces the
fallback.
"""
import os

from . import _pycore

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

_BACKENDS = {"python": _pycore}
if _core is not None:
    _BACKENDS["compiled"] = _core

DEFAULT = os.environ.get("FEYNSLICE_BACKEND", "compiled" if _core is not None else "python")
if DEFAULT not in _BACKENDS:
    raise ImportError(f"FEYNSLICE_BACKEND={DEFAULT!r} is not available")


def available():
    return sorted(_BACKENDS)


def get(name=None):
    return _BACKENDS[name or DEFAULT]
