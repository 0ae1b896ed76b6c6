"""Hot-kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``SRNCD_PURE_PYTHON=1`` before import to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("SRNCD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

pair_counts = _impl.pair_counts
scatter_add_rows = _impl.scatter_add_rows

__all__ = ["BACKEND", "pair_counts", "scatter_add_rows"]
