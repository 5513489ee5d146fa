"""Kernel dispatch: compiled extension if importable, numpy/pure-Python otherwise."""

import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("DEIDKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

levenshtein = _impl.levenshtein
frame_rms = _impl.frame_rms

__all__ = ["BACKEND", "levenshtein", "frame_rms"]
