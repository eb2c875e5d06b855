"""Scalar reverse-mode tape with a compiled kernel backend and a numpy fallback.

The backend is chosen once at import: the Cython extension if it built,
otherwise pure numpy. Override with the environment variable
``WENORL_BACKEND`` (``auto`` | ``cython`` | ``python``) or per ``Tape`` via
its ``backend=`` argument. Both backends produce bit-identical values and
adjoints.
"""

import os

from . import kernels_py

try:
    from . import _kernels
except ImportError:
    _kernels = None


def available_backends():
    """Names of the kernel backends importable in this installation."""
    names = ["python"]
    if _kernels is not None:
        names.insert(0, "cython")
    return tuple(names)


def select_kernels(name=None):
    """Resolve a backend name (or None/'auto') to its kernel module."""
    if name is None:
        name = os.environ.get("WENORL_BACKEND", "auto")
    if name == "auto":
        return _kernels if _kernels is not None else kernels_py
    if name == "cython":
        if _kernels is None:
            raise ImportError(
                "the compiled tape kernels are not available; reinstall with "
                "a C compiler or set WENORL_BACKEND=python")
        return _kernels
    if name == "python":
        return kernels_py
    raise ValueError(f"unknown tape backend {name!r}")


BACKEND = select_kernels().NAME

from .engine import GradientMap, Tape, TapeDomainError, TapeError  # noqa: E402

__all__ = ["Tape", "GradientMap", "TapeError", "TapeDomainError",
           "available_backends", "select_kernels", "BACKEND"]
