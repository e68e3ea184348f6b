"""Kernel backend selection.

The compiled extension is preferred when present; SGW_SPLAT_BACKEND=numpy or
=cython forces a choice (the latter raises if the extension is missing).
Selection happens once at import, so a fixed environment renders identically
across runs.
"""

import os

_requested = os.environ.get("SGW_SPLAT_BACKEND", "auto")

if _requested not in ("auto", "cython", "numpy"):
    raise ValueError(f"SGW_SPLAT_BACKEND must be auto, cython, or numpy, got {_requested!r}")

if _requested in ("auto", "cython"):
    try:
        from . import _splat_cy as _impl
        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        from . import splat_np as _impl
        BACKEND = "numpy"
else:
    from . import splat_np as _impl
    BACKEND = "numpy"

composite_forward = _impl.composite_forward
composite_backward = _impl.composite_backward
