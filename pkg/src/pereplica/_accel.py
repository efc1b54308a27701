"""Backend selection for the hot kernels.

Numba is used when importable unless ``PEREPLICA_DISABLE_NUMBA`` is set to a
truthy value, in which case every kernel dispatches to its pure-numpy twin.
The flag is read once at import time.
"""
import os

_FLAG = os.environ.get("PEREPLICA_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("numba disabled by PEREPLICA_DISABLE_NUMBA")
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator


BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"
