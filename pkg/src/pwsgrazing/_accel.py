"""Optional numba acceleration.

Hot kernels are written once in the numba-compatible subset of Python and
decorated with :func:`njit`.  When numba is missing, or the environment
variable ``PWSGRAZING_DISABLE_NUMBA`` is set to a truthy value, the decorator
is the identity and the same source runs as plain Python/numpy.
"""

import os

_DISABLED = os.environ.get("PWSGRAZING_DISABLE_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
    "on",
)

try:
    if _DISABLED:
        raise ImportError
    import numba as _numba

    HAS_NUMBA = True
except ImportError:
    _numba = None
    HAS_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache``-free defaults, or a no-op."""
    if HAS_NUMBA:
        kwargs.setdefault("cache", False)
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(fn):
        return fn

    return wrap


def backend() -> str:
    return "numba" if HAS_NUMBA else "python"
