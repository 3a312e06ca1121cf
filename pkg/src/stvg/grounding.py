"""Track and frame scoring, top-K temporal span, and tube assembly."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .core import GroundingAttentionMap, TrackProposal, Tube, track_rects
from .errors import EmptyIntersectionError, InvalidKError, NoProposalsError


@dataclass(frozen=True, eq=False)
class TrackScores:
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.scores)


@dataclass(frozen=True, eq=False)
class FrameScores:
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.scores)


def proposal_rects(proposals: Sequence[TrackProposal], frame_size, grid) -> np.ndarray:
    """``(P, frames, 4)`` rectangle stack for the kernels."""
    return np.stack([track_rects(p.boxes, frame_size, grid) for p in proposals])


def track_score(amap: GroundingAttentionMap, proposals: Sequence[TrackProposal],
                frame_size: tuple[float, float]) -> TrackScores:
    """Peak attention inside each proposal's per-frame boxes."""
    if not proposals:
        raise NoProposalsError()
    for p in proposals:
        if p.frame_count != amap.shape[0]:
            raise ValueError(f"track {p.track_id!r} spans {p.frame_count} frames, map has {amap.shape[0]}")
    rects = proposal_rects(proposals, frame_size, amap.grid)
    return TrackScores(kernels.track_max(amap.values, rects))


def frame_score(amap: GroundingAttentionMap, track: Optional[TrackProposal] = None,
                frame_size: Optional[tuple[float, float]] = None) -> FrameScores:
    """Per-frame peak attention.

    Full-frame by default.  Passing ``track`` restricts each frame to that
    track's box (frames without a box score 0); this couples the temporal
    branch to the spatial prediction and is off in the pipeline.
    """
    if track is None:
        return FrameScores(kernels.frame_max(amap.values))
    if frame_size is None:
        raise ValueError("frame_size is required with track masking")
    rects = track_rects(track.boxes, frame_size, amap.grid)
    out = np.zeros(amap.shape[0])
    for t in range(amap.shape[0]):
        single = np.full_like(rects[None], -1)
        single[0, t] = rects[t]
        out[t] = kernels.track_max(amap.values, single)[0]
    return FrameScores(out)


def select_track(scores: TrackScores | Sequence[float]) -> int:
    s = scores.scores if isinstance(scores, TrackScores) else np.asarray(scores)
    if len(s) == 0:
        raise NoProposalsError()
    return int(np.argmax(s))


def select_temporal_span(scores: FrameScores | Sequence[float], k: int) -> tuple[int, int, tuple[int, ...]]:
    """Top-``k`` frames (earlier frame wins ties) and their ``[min, max]`` hull."""
    s = np.asarray(scores.scores if isinstance(scores, FrameScores) else scores, dtype=np.float64)
    if not 1 <= k <= len(s):
        raise InvalidKError(k, len(s))
    order = np.argsort(-s, kind="stable")
    selected = tuple(sorted(int(i) for i in order[:k]))
    return selected[0], selected[-1], selected


def assemble_tube(proposal: TrackProposal, span: tuple[int, int]) -> Tube:
    """Restrict a track to ``span``; gaps copy the nearest visible in-span box (earlier on ties)."""
    t_s, t_e = span[0], span[1]
    if not 0 <= t_s <= t_e < proposal.frame_count:
        raise ValueError(f"span {span} outside track of {proposal.frame_count} frames")
    visible = [t for t in range(t_s, t_e + 1) if proposal.boxes[t] is not None]
    if not visible:
        raise EmptyIntersectionError((t_s, t_e))
    boxes = []
    for t in range(t_s, t_e + 1):
        b = proposal.boxes[t]
        if b is None:
            nearest = min(visible, key=lambda v: (abs(v - t), v))
            b = proposal.boxes[nearest]
        boxes.append(b)
    return Tube(t_s, t_e, tuple(boxes))


@dataclass(frozen=True, eq=False)
class Prediction:
    track_index: int
    track_scores: TrackScores
    frame_scores: FrameScores
    selected_frames: tuple[int, ...]
    tube: Tube


def joint_inference(spatial_map: GroundingAttentionMap, temporal_map: GroundingAttentionMap,
                    proposals: Sequence[TrackProposal], frame_size: tuple[float, float], k: int) -> Prediction:
    """Best track from the spatial map, top-K span from the temporal map, joined into a tube."""
    if spatial_map.shape != temporal_map.shape:
        raise ValueError("spatial and temporal maps must share one grid")
    ts = track_score(spatial_map, proposals, frame_size)
    idx = select_track(ts)
    fs = frame_score(temporal_map)
    t_s, t_e, selected = select_temporal_span(fs, min(k, len(fs)))
    tube = assemble_tube(proposals[idx], (t_s, t_e))
    return Prediction(idx, ts, fs, selected, tube)
