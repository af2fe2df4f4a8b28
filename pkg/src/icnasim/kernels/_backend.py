import os

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None
    HAVE_NUMBA = False


def use_numba() -> bool:
    flag = os.environ.get("ICNASIM_PURE_NUMPY", "").strip().lower()
    return HAVE_NUMBA and flag not in ("1", "true", "yes", "on")


BACKEND = "numba" if use_numba() else "numpy"


def njit(fn):
    """``numba.njit(cache=False)`` when available, else the plain function."""
    if HAVE_NUMBA:
        return numba.njit(cache=False)(fn)
    return fn
