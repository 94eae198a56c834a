"""Kernel acceleration switch.

Hot inner loops are compiled with numba by default. Setting the environment
variable ``PDMVS_NO_NUMBA=1`` before import selects a pure-Python/numpy
fallback path (same code, interpreted), useful for debugging and as a
reference for the benchmark suite.
"""

import os

USE_NUMBA = os.environ.get("PDMVS_NO_NUMBA", "0") != "1"

if USE_NUMBA:
    from numba import njit, prange
else:
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap

    prange = range
