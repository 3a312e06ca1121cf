"""Pure-Python/numpy versions of the masked-max kernels in ``_kernels.pyx``."""
from __future__ import annotations

import numpy as np

IMPLEMENTATION = "python"


def track_max(values: np.ndarray, rects: np.ndarray) -> np.ndarray:
    out = np.zeros(rects.shape[0], dtype=np.float64)
    for p in range(rects.shape[0]):
        best = 0.0
        for t in range(rects.shape[1]):
            r0, r1, c0, c1 = rects[p, t]
            if r0 < 0:
                continue
            best = max(best, float(values[t, r0:r1 + 1, c0:c1 + 1].max()))
        out[p] = best
    return out


def pair_track_max(a: np.ndarray, b: np.ndarray, rects: np.ndarray) -> np.ndarray:
    out = np.zeros(rects.shape[0], dtype=np.float64)
    for p in range(rects.shape[0]):
        best = 0.0
        for t in range(rects.shape[1]):
            r0, r1, c0, c1 = rects[p, t]
            if r0 < 0:
                continue
            prod = a[t, r0:r1 + 1, c0:c1 + 1] * b[t, r0:r1 + 1, c0:c1 + 1]
            best = max(best, float(prod.max()))
        out[p] = best
    return out


def inside_outside_max(values: np.ndarray, rects: np.ndarray) -> tuple[float, float]:
    mask = np.zeros(values.shape, dtype=bool)
    for t, (r0, r1, c0, c1) in enumerate(rects):
        if r0 >= 0:
            mask[t, r0:r1 + 1, c0:c1 + 1] = True
    inside = float(values[mask].max()) if mask.any() else 0.0
    outside = float(values[~mask].max()) if not mask.all() else 0.0
    return max(inside, 0.0), max(outside, 0.0)


def frame_max(values: np.ndarray) -> np.ndarray:
    return values.reshape(values.shape[0], -1).max(axis=1).astype(np.float64)
