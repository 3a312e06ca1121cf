"""Kernel dispatch: the compiled extension when built, numpy otherwise.

Set ``STVG_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os
from types import ModuleType

import numpy as np

from . import _kernels_py


def _load() -> ModuleType:
    if os.environ.get("STVG_PURE_PYTHON", "") not in ("", "0"):
        return _kernels_py
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return _kernels_py
    return _kernels


_impl = _load()
IMPLEMENTATION: str = _impl.IMPLEMENTATION


def available() -> dict[str, ModuleType]:
    """All importable kernel implementations, keyed by name."""
    impls = {"python": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]

        impls["cython"] = _kernels
    except ImportError:
        pass
    return impls


def _f64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _i32(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int32)


def track_max(values, rects, impl: ModuleType | None = None) -> np.ndarray:
    """Max of ``values`` inside each track's rectangles; 0 for an empty track."""
    return (impl or _impl).track_max(_f64(values), _i32(rects))


def pair_track_max(a, b, rects, impl: ModuleType | None = None) -> np.ndarray:
    return (impl or _impl).pair_track_max(_f64(a), _f64(b), _i32(rects))


def inside_outside_max(values, rects, impl: ModuleType | None = None) -> tuple[float, float]:
    inside, outside = (impl or _impl).inside_outside_max(_f64(values), _i32(rects))
    return float(inside), float(outside)


def frame_max(values, impl: ModuleType | None = None) -> np.ndarray:
    return (impl or _impl).frame_max(_f64(values))
