"""Selects the compiled core or the pure-Python fallback at import time.

Set ``GPPDE_BACKEND=python`` to force the fallback.  Tests and benchmarks can
switch at runtime with :func:`set_backend`.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _fallback

try:
    from . import _core as _compiled
except ImportError:  # extension not built
    _compiled = None

_active: ModuleType = _fallback


def available() -> list[str]:
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def set_backend(name: str) -> None:
    global _active
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled core is not available; build the extension first")
        _active = _compiled
    elif name == "python":
        _active = _fallback
    else:
        raise ValueError(f"unknown backend {name!r}")


def name() -> str:
    return "compiled" if _active is _compiled and _compiled is not None else "python"


def active() -> ModuleType:
    return _active


if _compiled is not None and os.environ.get("GPPDE_BACKEND", "").lower() != "python":
    _active = _compiled
