"""Hot inner loops with a compiled backend and a pure-numpy fallback.

The compiled extension is used when it imports; set ``OBA_PURE_PYTHON=1`` to
force the fallback. ``BACKEND`` names the active one.
"""

import os

import numpy as np

from . import _fallback

if os.environ.get("OBA_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _fallback


def rasterize_edges(x0, y0, x1, y1, width, height, col_off=0, row_off=0):
    """Even-odd fill of integer pixel centres bounded by the given edges.

    Edges are given in pixel coordinates where pixel ``(col, row)`` has its
    centre at ``(col, row)``. The returned ``(height, width)`` uint8 array of
    0/1 covers columns ``col_off..col_off+width-1`` and the matching rows.
    """
    arrs = [np.ascontiguousarray(a, dtype=np.float64) for a in (x0, y0, x1, y1)]
    return _impl.rasterize_edges(*arrs, int(width), int(height), int(col_off), int(row_off))


def convolve_padded(padded, kernel):
    """Valid-mode correlation of an (H, W, C) float array with a 2-D kernel."""
    return _impl.convolve_padded(
        np.ascontiguousarray(padded, dtype=np.float64),
        np.ascontiguousarray(kernel, dtype=np.float64),
    )
