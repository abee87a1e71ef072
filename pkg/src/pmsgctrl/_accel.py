"""JIT plumbing for the hot simulation kernels.

All inner-loop kernels in :mod:`pmsgctrl.kernels` are compiled with numba's
``@njit`` when it is available.  Setting the environment variable
``PMSGCTRL_DISABLE_NUMBA=1`` (before import) keeps the exact same code
running as plain Python/numpy, which is handy for debugging and for
machines without a working numba install.  ``benchmarks/bench_kernels.py``
compares the two paths.
"""

import os

_flag = os.environ.get("PMSGCTRL_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _flag not in ("", "0", "false", "no")

NUMBA_ENABLED = False
if not NUMBA_DISABLED:
    try:
        from numba import njit  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        pass

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):
        """Stand-in for numba.njit that leaves the function untouched."""
        if args and callable(args[0]):
            return args[0]

        def decorator(func):
            return func

        return decorator
