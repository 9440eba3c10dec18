"""Hot numeric kernels with a numba fast path and a NumPy fallback.

The backend is chosen once at import time. Set ``MORPHFLOW_NUMBA=0`` to
force the pure-NumPy path (useful on platforms without a working numba,
and for the benchmark in ``benchmarks/bench_kernels.py`` which compares
both). Anything else, including an unset variable, prefers numba.
"""

from __future__ import annotations

import os

from . import numpy_backend

_flag = os.environ.get("MORPHFLOW_NUMBA", "1").strip().lower()

if _flag in ("0", "false", "off", "no"):
    _active = numpy_backend
    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _active
        BACKEND = "numba"
    except ImportError:
        _active = numpy_backend
        BACKEND = "numpy"

window_min = _active.window_min
window_max = _active.window_max
window_reduce_backward = _active.window_reduce_backward
shift_bilinear = _active.shift_bilinear
shift_bilinear_backward = _active.shift_bilinear_backward
torus_minconv = _active.torus_minconv
upwind_gradnorm = _active.upwind_gradnorm


def backend() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return BACKEND
