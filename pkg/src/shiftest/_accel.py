"""Backend selection for the hot numeric kernels.

The coordinate-descent kernels in :mod:`shiftest.solver` ship in two
interchangeable implementations: numba ``@njit`` loops and vectorized
numpy. Setting the environment variable ``SHIFTEST_DISABLE_NUMBA=1``
selects the numpy path; it is also used automatically when numba is not
importable. ``benchmarks/bench_solver.py`` compares the two.
"""

import os

_DISABLED = os.environ.get("SHIFTEST_DISABLE_NUMBA", "").strip().lower() in {
    "1",
    "true",
    "yes",
}

NUMBA_ENABLED = False
if not _DISABLED:
    try:
        from numba import njit  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        pass

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):  # type: ignore[misc]
        """No-op stand-in for ``numba.njit`` on the numpy path."""
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


BACKEND = "numba" if NUMBA_ENABLED else "numpy"
