"""Numba acceleration switch.

Hot kernels ship in two builds: numba @njit loop kernels and vectorized
numpy fallbacks. The numba build is used whenever numba imports cleanly;
set ROTOKIN_NO_NUMBA=1 to force the numpy path (useful for debugging and
for benchmarking one path against the other, see benchmarks/backends.py).

The flag is read once at import time.
"""

import os

__all__ = ["NUMBA_ENABLED", "njit"]


def _disabled_by_env() -> bool:
    return os.environ.get("ROTOKIN_NO_NUMBA", "0").strip().lower() in ("1", "true", "yes")


NUMBA_ENABLED = not _disabled_by_env()

if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:
    def njit(*args, **kwargs):
        """Identity decorator stand-in when numba is disabled or missing."""
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap
