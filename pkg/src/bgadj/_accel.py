"""Backend selection for the compiled kernels.

``BGADJ_NUMBA=0`` (or a missing numba install) routes every kernel through
its vectorized numpy twin.
"""
import contextlib
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAS_NUMBA = numba is not None

_flag = os.environ.get("BGADJ_NUMBA", "1").strip().lower()
_backend = "numba" if HAS_NUMBA and _flag not in ("0", "false", "no", "off") else "numpy"


def njit(func):
    if numba is None:  # pragma: no cover
        return func
    return numba.njit(cache=True, nogil=True)(func)


def backend():
    return _backend


def set_backend(name):
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


@contextlib.contextmanager
def use_backend(name):
    prev = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def default_threads():
    try:
        return max(1, int(os.environ.get("BGADJ_THREADS", "1")))
    except ValueError:
        return 1
