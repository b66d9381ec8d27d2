"""Rasterization kernel selection.

Imports the compiled Cython fill when available, otherwise the numpy
fallback. Set DUALPATCH_PURE=1 to force the fallback (used by tests and
the kernel benchmark). Both backends produce bit-identical masks.
"""

import os

import numpy as np

from . import fallback as _fallback

_use_compiled = os.environ.get("DUALPATCH_PURE", "") != "1"
_compiled = None
if _use_compiled:
    try:
        from . import _polyfill as _compiled  # type: ignore[no-redef]
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "fallback"


def fill_window(xs, ys, bits, row0, row1, col0, col1):
    """Fill pixel centers inside polygon (xs, ys) into the bool grid `bits`.

    The window [row0, row1) x [col0, col1) must be pre-clipped to the grid.
    """
    if row1 <= row0 or col1 <= col0:
        return
    if _compiled is not None:
        _compiled.fill_window(xs, ys, bits.view(np.uint8), row0, row1, col0, col1)
    else:
        _fallback.fill_window(xs, ys, bits, row0, row1, col0, col1)
