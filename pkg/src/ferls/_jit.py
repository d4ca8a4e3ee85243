"""Optional numba acceleration.

Set ``FERLS_NUMBA=0`` to force the pure-numpy kernels (also used when
numba is not importable).
"""
import os

USE_NUMBA = os.environ.get("FERLS_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None
    USE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when available, otherwise a no-op decorator."""
    if numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)
