"""Backend selection for the hot loops.

The compiled ``_kernels`` extension is used when importable; otherwise the
numpy fallback in ``_pykernels``. Set ``UNBLOC_PURE_PYTHON=1`` to force the
fallback.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels


def _load_compiled() -> ModuleType | None:
    if os.environ.get("UNBLOC_PURE_PYTHON") == "1":
        return None
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()
BACKEND = "cython" if _compiled is not None else "python"
_active = _compiled if _compiled is not None else _pykernels


def available_backends() -> list[str]:
    return ["cython", "python"] if _compiled is not None else ["python"]


def get_backend(name: str | None = None) -> ModuleType:
    if name is None:
        return _active
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def best_split(X, idx, y, order, max_features, n_classes):
    return _active.best_split(X, idx, y, order, max_features, n_classes)


def smo_solve(Q, y, C, tol, max_iter):
    return _active.smo_solve(Q, y, C, tol, max_iter)
