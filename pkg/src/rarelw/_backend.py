"""Pick the compiled kernels when available, numpy otherwise.

``RARELW_PURE_PYTHON=1`` forces the fallback even when the extension is
built.  ``use(name)`` switches at runtime (used by the backend benchmark
and the cross-backend tests).
"""
import logging
import os

from . import _fallback

logger = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_NAMES = ("cross_cov", "recursive_update", "oscillator_batch", "sir_batch", "ship_batch")

_num_threads = 1
_impl = _fallback


def available():
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def use(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous selection."""
    global _impl
    previous = current()
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built; reinstall with Cython available")
        _impl = _compiled
    elif name == "python":
        _impl = _fallback
    else:
        raise ValueError(f"unknown backend {name!r}")
    return previous


def current():
    return "compiled" if _impl is _compiled and _compiled is not None else "python"


def set_num_threads(n):
    global _num_threads
    _num_threads = max(1, int(n))


def get_num_threads():
    return _num_threads


def call(name, *args):
    return getattr(_impl, name)(*args, _num_threads)


if _compiled is not None and not os.environ.get("RARELW_PURE_PYTHON"):
    _impl = _compiled
else:
    logger.debug("rarelw: using pure-Python kernels")
