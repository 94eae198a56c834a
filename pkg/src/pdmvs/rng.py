"""Counter-based deterministic random numbers.

Every random draw in the engine is a pure function of
(seed, view, pixel index, iteration, counter), so results are independent
of pixel visitation order and of how work is split across threads.
"""

import numpy as np

from .accel import USE_NUMBA, njit

_MASK = (1 << 64) - 1
_C1 = 0x9E3779B97F4A7C15
_C2 = 0xBF58476D1CE4E5B9
_C3 = 0x94D049BB133111EB
_INV53 = 1.0 / float(1 << 53)


def splitmix_py(z: int) -> int:
    """Reference splitmix64 finalizer on python ints (always available)."""
    z = (z + _C1) & _MASK
    z = ((z ^ (z >> 30)) * _C2) & _MASK
    z = ((z ^ (z >> 27)) * _C3) & _MASK
    return (z ^ (z >> 31)) & _MASK


def mix5_py(seed: int, a: int, b: int, c: int, d: int) -> int:
    z = seed & _MASK
    for w in (a, b, c, d):
        z = splitmix_py(z ^ (w & _MASK))
    return z


def rand01_py(seed: int, a: int, b: int, c: int, d: int) -> float:
    return (mix5_py(seed, a, b, c, d) >> 11) * _INV53


if USE_NUMBA:

    @njit(cache=True)
    def _splitmix(z):
        z = z + np.uint64(_C1)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_C2)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_C3)
        return z ^ (z >> np.uint64(31))

    @njit(cache=True)
    def mix5(seed, a, b, c, d):
        z = np.uint64(seed)
        z = _splitmix(z ^ np.uint64(a))
        z = _splitmix(z ^ np.uint64(b))
        z = _splitmix(z ^ np.uint64(c))
        z = _splitmix(z ^ np.uint64(d))
        return z

    @njit(cache=True)
    def rand01(seed, a, b, c, d):
        return (mix5(seed, a, b, c, d) >> np.uint64(11)) * _INV53

else:
    mix5 = mix5_py
    rand01 = rand01_py
