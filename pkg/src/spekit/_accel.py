"""Numba switch shared by every hot kernel.

Set ``SPEKIT_DISABLE_NUMBA=1`` before import to force the pure-numpy paths.
Both paths are kept bit-identical; the test-suite checks this.
"""

import os
import warnings

_DISABLED = os.environ.get("SPEKIT_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

# Old system TBB only triggers a fallback to the omp/workqueue layer.
warnings.filterwarnings("ignore", message="The TBB threading layer requires")

try:
    import numba
    from numba import njit, prange

    if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator

    prange = range

USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
