"""Backend selection for the hot kernels.

Every kernel in the package has two implementations: a numba ``@njit`` loop
and a vectorized numpy equivalent.  Numba is used when importable unless the
environment sets ``CORAL_DISABLE_NUMBA=1``.  ``CORAL_NUM_THREADS`` caps the
worker count of the parallel loops; results do not depend on it.
"""
from __future__ import annotations

import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skip the tbb probe, which warns on older tbb builds
        try:
            from numba.np.ufunc import omppool  # noqa: F401

            numba.config.THREADING_LAYER = "omp"
        except ImportError:
            numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

    prange = range

USE_NUMBA = HAVE_NUMBA and os.environ.get("CORAL_DISABLE_NUMBA", "").strip().lower() in _FALSY


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def configure_threads(n: int | None = None) -> int:
    """Apply a worker-count override (argument, else ``CORAL_NUM_THREADS``).

    Returns the number of threads in effect (1 for the numpy backend).
    """
    if n is None:
        raw = os.environ.get("CORAL_NUM_THREADS", "").strip()
        n = int(raw) if raw else None
    if not USE_NUMBA:
        return 1
    if n is not None:
        n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
        numba.set_num_threads(n)
    return numba.get_num_threads()
