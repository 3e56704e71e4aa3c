"""Kernel backend selection.

The compiled extension is used when it imports; otherwise (or when
``SOARL_PURE_PYTHON=1``) the pure-Python twins are used. Both produce
identical results for identical inputs.
"""
from __future__ import annotations

import os

from . import _pykernels
from ._pykernels import BUDGET, MAX_STEPS, REACHED, RUNNING, TASK_COMPLETE, VIOLATION  # noqa: F401

_compiled = None
if os.environ.get("SOARL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def get(backend: str | None = None):
    """Return the kernel module for ``backend`` ('compiled', 'python' or None for the default)."""
    if backend is None:
        backend = BACKEND
    if backend == "python":
        return _pykernels
    if backend == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not available; build the extension first")
        return _compiled
    raise ValueError(f"unknown kernel backend {backend!r}")


def available() -> list[str]:
    return ["python"] + (["compiled"] if _compiled is not None else [])
