"""Backend selection, done once at import.

The compiled core is used when it imports; ``MINIMR_BACKEND=python``
forces the pure-Python implementation and ``MINIMR_BACKEND=compiled``
makes a missing core an error.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pymap


def _load_compiled() -> ModuleType | None:
    try:
        from . import _core
    except ImportError:
        return None
    return _core


_compiled = _load_compiled()
_choice = os.environ.get("MINIMR_BACKEND", "auto").lower()

if _choice == "python":
    active: ModuleType = _pymap
elif _choice == "compiled":
    if _compiled is None:
        raise ImportError("MINIMR_BACKEND=compiled but minimr._core is not built")
    active = _compiled
else:
    active = _compiled or _pymap

BACKEND: str = active.NAME


def available() -> list[str]:
    return ["compiled", "python"] if _compiled is not None else ["python"]


def get(name: str | None = None) -> ModuleType:
    """Backend module by name; ``None`` or ``"auto"`` gives the active one."""
    if name in (None, "auto"):
        return active
    if name == "python":
        return _pymap
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled backend is not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
