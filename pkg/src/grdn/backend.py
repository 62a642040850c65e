"""Kernel backend selection.

The convolution kernels exist in two implementations: numba-compiled direct
loops and a pure-numpy im2col path. The active backend is chosen once from the
``GRDN_BACKEND`` environment variable (``auto``, ``numba`` or ``numpy``) and
can be overridden at runtime with :func:`set_backend`, which the benchmark and
the test suite use to exercise both paths.
"""

import os

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

ENV_VAR = "GRDN_BACKEND"

_BACKENDS = ("numba", "numpy")


def _resolve(name: str) -> str:
    name = name.strip().lower()
    if name in ("", "auto"):
        return "numba" if HAS_NUMBA else "numpy"
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}, expected one of {_BACKENDS} or 'auto'")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("GRDN_BACKEND=numba requested but numba is not importable")
    return name


_active = _resolve(os.environ.get(ENV_VAR, "auto"))


def get_backend() -> str:
    """Return the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return _active


def set_backend(name: str) -> str:
    """Override the active backend; returns the resolved name."""
    global _active
    _active = _resolve(name)
    return _active
