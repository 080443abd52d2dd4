"""Hot-loop kernels: compiled when available, numpy otherwise.

Set ``IRBRIDGE_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _py

BACKEND = "python"
if os.environ.get("IRBRIDGE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _em as _compiled
    except ImportError:  # extension not built
        _compiled = None
    else:
        BACKEND = "cython"
else:
    _compiled = None

em_affine = _compiled.em_affine if _compiled is not None else _py.em_affine
em_affine_python = _py.em_affine
em_affine_compiled = _compiled.em_affine if _compiled is not None else None

__all__ = ["BACKEND", "em_affine", "em_affine_python", "em_affine_compiled"]
