"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the NumPy
fallback. Setting ``KLAUSMEIER_BACKEND=python`` forces the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py


def _load():
    if os.environ.get("KLAUSMEIER_BACKEND", "").lower() == "python":
        return _kernels_py, "python"
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return _kernels_py, "python"
    return _kernels, "compiled"


_impl, BACKEND = _load()

tridiag_solve = _impl.tridiag_solve
tridiag_solve_complex = _impl.tridiag_solve_complex
cyclic_solve = _impl.cyclic_solve
imex_step = _impl.imex_step


def get_backend(name: str):
    """Return the kernel module for ``name`` in {"compiled", "python"}."""
    if name == "python":
        return _kernels_py
    from . import _kernels  # type: ignore[attr-defined]

    return _kernels
