"""Compute-backend selection.

Hot kernels exist twice: a numba @njit build (`_kernels_numba`) and a pure
numpy build (`_kernels_numpy`) with identical signatures.  The active backend
is chosen once, at first use, from the MEANFIELDQ_BACKEND environment
variable:

    auto   (default)  numba when importable, else numpy
    numba             require numba, fail loudly if missing
    numpy             force the pure-numpy path

Both builds are kept importable so tests and benchmarks can compare them
side by side regardless of the active choice.
"""

from __future__ import annotations

import os

_ENV_VAR = "MEANFIELDQ_BACKEND"
_cached = None


def _load(name: str):
    if name == "numpy":
        from . import _kernels_numpy

        return _kernels_numpy
    if name == "numba":
        from . import _kernels_numba

        return _kernels_numba
    raise ValueError(f"unknown backend {name!r}; expected auto, numba or numpy")


def get_kernels(name: str | None = None):
    """Return the kernel module for `name`, or the env-selected default."""
    global _cached
    if name is not None:
        return _load(name)
    if _cached is None:
        choice = os.environ.get(_ENV_VAR, "auto").strip().lower()
        if choice == "auto":
            try:
                _cached = _load("numba")
            except ImportError:
                _cached = _load("numpy")
        else:
            _cached = _load(choice)
    return _cached


def active_backend_name() -> str:
    return get_kernels().BACKEND_NAME
