"""Domain types shared by every stage, box rasterization and frame sampling.

All frame indices used here are *sampled* indices (0 .. frame_count-1).
Mapping back to source frames happens only in :mod:`stvg.evalkit`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import BoxOutOfBoundsError

EPSILON = 1e-12


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not np.all(np.isfinite(self.as_tuple())):
            raise ValueError(f"non-finite box {self.as_tuple()}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate or reversed box {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def clipped(self, width: float, height: float) -> "BoundingBox":
        return BoundingBox(
            max(self.x_min, 0.0), max(self.y_min, 0.0),
            min(self.x_max, float(width)), min(self.y_max, float(height)),
        )

    def within(self, width: float, height: float) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height


@dataclass(frozen=True)
class VideoClip:
    clip_id: str
    frame_indices: tuple[int, ...]
    width_px: int
    height_px: int

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.frame_indices)
        object.__setattr__(self, "frame_indices", idx)
        if len(idx) < 1:
            raise ValueError("a clip needs at least one frame")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("frame_indices must be strictly increasing")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("frame dimensions must be positive")

    @property
    def frame_count(self) -> int:
        return len(self.frame_indices)

    @property
    def frame_size(self) -> tuple[int, int]:
        return (self.width_px, self.height_px)


@dataclass(frozen=True)
class Tube:
    """Per-frame boxes over the inclusive sampled-frame span ``[t_s, t_e]``.

    Used both for ground truth and for predictions.
    """

    t_s: int
    t_e: int
    boxes: tuple[BoundingBox, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not (0 <= self.t_s <= self.t_e):
            raise ValueError(f"invalid span ({self.t_s}, {self.t_e})")
        if len(self.boxes) != self.t_e - self.t_s + 1:
            raise ValueError(
                f"tube over ({self.t_s}, {self.t_e}) needs {self.t_e - self.t_s + 1} boxes, got {len(self.boxes)}"
            )

    @property
    def frames(self) -> range:
        return range(self.t_s, self.t_e + 1)

    def box_at(self, t: int) -> Optional[BoundingBox]:
        if self.t_s <= t <= self.t_e:
            return self.boxes[t - self.t_s]
        return None

    def validate(self, frame_count: int, width: float, height: float) -> None:
        if self.t_e >= frame_count:
            raise ValueError(f"tube end {self.t_e} beyond frame_count {frame_count}")
        for b in self.boxes:
            if not b.within(width, height):
                raise ValueError(f"tube box {b.as_tuple()} outside frame {width}x{height}")

    def as_proposal(self, frame_count: int, track_id: str = "gt") -> "TrackProposal":
        boxes = [self.box_at(t) for t in range(frame_count)]
        return TrackProposal(track_id, tuple(boxes))


GroundTruthTube = Tube
GroundedTube = Tube


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    text: str
    gt_tube: Optional[Tube] = None

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValueError("query text must be non-empty")


@dataclass(frozen=True)
class TrackProposal:
    track_id: str
    boxes: tuple[Optional[BoundingBox], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not any(b is not None for b in self.boxes):
            raise ValueError(f"track {self.track_id!r} has no visible frame")

    @property
    def frame_count(self) -> int:
        return len(self.boxes)

    def visible_frames(self) -> list[int]:
        return [t for t, b in enumerate(self.boxes) if b is not None]


@dataclass(frozen=True)
class TokenLayout:
    """Spans of the model input: system, visual, query, then special (role) tokens."""

    n_sys: int
    m_visual: int
    n_query: int
    n_role: int
    grid: tuple[int, int, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        if min(self.n_sys, self.m_visual, self.n_query, self.n_role) < 0:
            raise ValueError("token counts must be non-negative")
        if self.n_role < 1:
            raise ValueError("layout needs at least one special token")
        t, h, w = self.grid
        if t * h * w != self.m_visual:
            raise ValueError(f"grid {self.grid} does not cover {self.m_visual} visual tokens")

    @property
    def total(self) -> int:
        return self.n_sys + self.m_visual + self.n_query + self.n_role

    @property
    def visual_slice(self) -> slice:
        return slice(self.n_sys, self.n_sys + self.m_visual)

    @property
    def query_slice(self) -> slice:
        start = self.n_sys + self.m_visual
        return slice(start, start + self.n_query)

    @property
    def role_slice(self) -> slice:
        return slice(self.total - self.n_role, self.total)


@dataclass(frozen=True, eq=False)
class RawAttention:
    """Attention probabilities of shape ``(layers, heads, N, N)``."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values)
        if v.ndim != 4 or v.shape[2] != v.shape[3]:
            raise ValueError(f"raw attention must be (L, H, N, N), got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("raw attention must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_tokens(self) -> int:
        return self.values.shape[2]

    def check_rows(self, tol: float = 1e-4) -> None:
        sums = self.values.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=tol, rtol=0.0):
            worst = float(np.max(np.abs(sums - 1.0)))
            raise ValueError(f"attention rows do not sum to 1 (max deviation {worst:.3g})")


@dataclass(frozen=True, eq=False)
class GroundingAttentionMap:
    """One token's attention over the visual grid, shape ``(frames, h, w)``."""

    values: np.ndarray
    token_index: int = -1

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"attention map must be (frames, h, w), got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("attention map must be finite and non-negative")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def grid(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]


@dataclass(frozen=True, eq=False)
class GridMask:
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.uint8)
        if np.any(v > 1):
            raise ValueError("grid mask must be binary")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class LRAConfig:
    n_ep: int = 10
    step_size: float = 1e-2
    init: str = "zeros"

    def __post_init__(self) -> None:
        if self.n_ep < 1:
            raise ValueError("n_ep must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.init != "zeros":
            raise ValueError(f"unsupported latent init {self.init!r}")


@dataclass(frozen=True)
class PipelineConfig:
    n_frames_sampled: int = 20
    top_k_frames: int = 7
    lra: LRAConfig = field(default_factory=LRAConfig)
    epsilon: float = EPSILON

    def __post_init__(self) -> None:
        if not 1 <= self.top_k_frames <= self.n_frames_sampled:
            raise ValueError("need 1 <= top_k_frames <= n_frames_sampled")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


# --- rasterization -------------------------------------------------------

Rect = tuple[int, int, int, int]  # (row0, row1, col0, col1), inclusive


def _cell_range(lo: float, hi: float, extent: float, cells: int) -> tuple[int, int]:
    centers = (np.arange(cells) + 0.5) * extent / cells
    inside = np.flatnonzero((centers >= lo) & (centers <= hi))
    if inside.size == 0:
        return -1, -1
    return int(inside[0]), int(inside[-1])


def _nearest_cell(coord: float, extent: float, cells: int) -> int:
    centers = (np.arange(cells) + 0.5) * extent / cells
    return int(np.argmin(np.abs(centers - min(max(coord, 0.0), extent))))


def box_to_rect(box: BoundingBox, frame_size: tuple[float, float], grid: tuple[int, int]) -> Rect:
    """Grid cells whose centers fall inside ``box``, as an inclusive rectangle.

    Falls back to the single cell nearest the box center when no center is
    covered, so the result is never empty.
    """
    width, height = frame_size
    h, w = grid
    if box.x_max <= 0 or box.y_max <= 0 or box.x_min >= width or box.y_min >= height:
        raise BoxOutOfBoundsError(f"{box.as_tuple()} vs frame {width}x{height}")
    r0, r1 = _cell_range(box.y_min, box.y_max, height, h)
    c0, c1 = _cell_range(box.x_min, box.x_max, width, w)
    if r0 < 0 or c0 < 0:
        cx, cy = box.center
        r = _nearest_cell(cy, height, h)
        c = _nearest_cell(cx, width, w)
        return (r, r, c, c)
    return (r0, r1, c0, c1)


def rasterize_box(box: BoundingBox, frame_size: tuple[float, float], grid: tuple[int, int]) -> GridMask:
    r0, r1, c0, c1 = box_to_rect(box, frame_size, grid)
    mask = np.zeros(grid, dtype=np.uint8)
    mask[r0:r1 + 1, c0:c1 + 1] = 1
    return GridMask(mask)


def track_rects(
    boxes: Sequence[Optional[BoundingBox]], frame_size: tuple[float, float], grid: tuple[int, int]
) -> np.ndarray:
    """Per-frame rectangles for a box sequence; absent frames are ``-1`` rows."""
    rects = np.full((len(boxes), 4), -1, dtype=np.int32)
    for t, b in enumerate(boxes):
        if b is not None:
            rects[t] = box_to_rect(b, frame_size, grid)
    return rects


def rasterize_track(
    boxes: Sequence[Optional[BoundingBox]], frame_size: tuple[float, float], grid: tuple[int, int]
) -> GridMask:
    """Stack of per-frame masks ``(frames, h, w)``; frames without a box are all zero."""
    mask = np.zeros((len(boxes),) + tuple(grid), dtype=np.uint8)
    for t, (r0, r1, c0, c1) in enumerate(track_rects(boxes, frame_size, grid)):
        if r0 >= 0:
            mask[t, r0:r1 + 1, c0:c1 + 1] = 1
    return GridMask(mask)


def sample_frames(source_frame_count: int, n_frames_sampled: int) -> list[int]:
    """Evenly spaced source indices ``floor((i + 0.5) * source / n)``, deduplicated."""
    if source_frame_count < 1:
        raise ValueError("source_frame_count must be >= 1")
    if n_frames_sampled < 1:
        raise ValueError("n_frames_sampled must be >= 1")
    out: list[int] = []
    for i in range(n_frames_sampled):
        idx = ((2 * i + 1) * source_frame_count) // (2 * n_frames_sampled)
        if not out or idx != out[-1]:
            out.append(idx)
    return out
