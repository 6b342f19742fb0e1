"""Scan-kernel backend selection.

``FWL_BACKEND`` picks the implementation of the sequence scans:
  auto   compiled kernels when numba imports, numpy otherwise (default)
  numba  compiled kernels, error if numba is unavailable
  numpy  pure-numpy kernels

Both backends expose identical functions with identical semantics; the
equivalence is covered by tests, and the benchmark compares their speed.
"""
from __future__ import annotations

import os

from . import scans as _scans

_numba_mod = None
_numba_error = None


def numba_available():
    global _numba_mod, _numba_error
    if _numba_mod is None and _numba_error is None:
        try:
            from . import scans_numba
            _numba_mod = scans_numba
        except ImportError as exc:  # pragma: no cover - env without numba
            _numba_error = exc
    return _numba_mod is not None


def resolve(name=None):
    """Return the scan module for ``name`` (default: $FWL_BACKEND or auto)."""
    name = name or os.environ.get("FWL_BACKEND", "auto")
    if name == "numpy":
        return _scans
    if name == "numba":
        if not numba_available():
            raise RuntimeError(
                f"FWL_BACKEND=numba but numba is unusable: {_numba_error}")
        return _numba_mod
    if name == "auto":
        return _numba_mod if numba_available() else _scans
    raise ValueError(f"unknown backend {name!r} "
                     "(expected auto, numba or numpy)")


def backend_name():
    mod = resolve()
    return "numba" if mod is not _scans else "numpy"
