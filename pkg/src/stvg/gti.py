"""Grounding-token identification.

Special (role) tokens sit after the user prompt.  Their attention to the
visual span, averaged over layers and heads, localizes the query target;
which token localizes best varies per sample, and the token with the
highest peak activation is picked without ground truth.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .core import EPSILON, GroundingAttentionMap, RawAttention, TokenLayout, TrackProposal, Tube, track_rects
from .errors import NoSamplesError
from .evalkit import track_iou

ACC_IOU = 0.5


@dataclass(frozen=True, eq=False)
class SpecialTokenAttention:
    maps: tuple[GroundingAttentionMap, ...]
    token_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "maps", tuple(self.maps))
        object.__setattr__(self, "token_labels", tuple(self.token_labels))
        if not self.maps:
            raise ValueError("no special-token maps")
        if len(self.token_labels) != len(self.maps):
            raise ValueError("one label per map required")
        if len({m.shape for m in self.maps}) != 1:
            raise ValueError("all maps must share one grid shape")

    def __len__(self) -> int:
        return len(self.maps)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.maps[0].shape

    def activations(self) -> np.ndarray:
        """Peak (global max) attention of each token."""
        return np.array([m.values.max() for m in self.maps])

    def scaled(self, factors: Sequence[float]) -> "SpecialTokenAttention":
        maps = tuple(GroundingAttentionMap(m.values * f, m.token_index) for m, f in zip(self.maps, factors))
        return SpecialTokenAttention(maps, self.token_labels)


def aggregate_attention(raw: RawAttention | np.ndarray, layout: TokenLayout,
                        token_labels: Optional[Sequence[str]] = None) -> SpecialTokenAttention:
    """Layer/head mean of each special-token row over the visual span."""
    values = raw.values if isinstance(raw, RawAttention) else np.asarray(raw)
    if values.shape[2] != layout.total:
        raise ValueError(f"layout covers {layout.total} tokens, attention has {values.shape[2]}")
    block = values[:, :, layout.role_slice, layout.visual_slice].astype(np.float64)
    mean = block.mean(axis=(0, 1))
    maps = tuple(GroundingAttentionMap(mean[i].reshape(layout.grid), i) for i in range(layout.n_role))
    labels = tuple(token_labels) if token_labels else tuple(f"role{i}" for i in range(layout.n_role))
    return SpecialTokenAttention(maps, labels)


def _gt_rects(gt: Tube, n_frames: int, frame_size, grid) -> np.ndarray:
    return track_rects([gt.box_at(t) for t in range(n_frames)], frame_size, grid)


def attention_ratio(amap: GroundingAttentionMap, gt: Tube, frame_size: tuple[float, float],
                    epsilon: float = EPSILON) -> float:
    """Peak attention inside the ground-truth boxes over peak attention outside them.

    Maxima are taken jointly over every frame of the clip; the denominator
    is clamped to ``epsilon``.
    """
    rects = _gt_rects(gt, amap.shape[0], frame_size, amap.grid)
    inside, outside = kernels.inside_outside_max(amap.values, rects)
    return inside / max(outside, epsilon)


def superior_token(sta: SpecialTokenAttention, gt: Tube, frame_size: tuple[float, float],
                   epsilon: float = EPSILON) -> int:
    ratios = [attention_ratio(m, gt, frame_size, epsilon) for m in sta.maps]
    return int(np.argmax(ratios))


def activation_ranking(sta: SpecialTokenAttention) -> list[int]:
    """Token indices by descending peak activation, lowest index first on ties."""
    act = sta.activations()
    return sorted(range(len(sta)), key=lambda i: (-act[i], i))


def select_grounding_token(sta: SpecialTokenAttention) -> tuple[int, GroundingAttentionMap]:
    idx = int(np.argmax(sta.activations()))
    return idx, sta.maps[idx]


# --- pilot studies --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GtiSample:
    attention: SpecialTokenAttention
    gt: Tube
    frame_size: tuple[float, float]
    proposals: tuple[TrackProposal, ...] = ()
    sample_id: str = ""


@dataclass(frozen=True)
class GtiReport:
    token_labels: tuple[str, ...]
    hit_ratio: tuple[float, ...] = ()
    rank_accuracy: tuple[float, ...] = ()
    rows: tuple[dict, ...] = ()

    def to_json(self) -> dict:
        out: dict = {}
        if self.hit_ratio:
            out["hit_ratio"] = {lab: v for lab, v in zip(self.token_labels, self.hit_ratio)}
        if self.rank_accuracy:
            out["rank_accuracy"] = {str(r): v for r, v in enumerate(self.rank_accuracy)}
        return out

    def write(self, json_path: str | Path, csv_path: Optional[str | Path] = None) -> None:
        Path(json_path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=False) + "\n")
        if csv_path is not None and self.rows:
            cols = list(self.rows[0].keys())
            with open(csv_path, "w", newline="") as fh:
                w = csv.DictWriter(fh, cols, lineterminator="\n")
                w.writeheader()
                w.writerows(self.rows)


def hit_ratio_study(samples: Sequence[GtiSample], epsilon: float = EPSILON) -> GtiReport:
    """How often each special token is the superior grounding token."""
    if not samples:
        raise NoSamplesError()
    n_tok = len(samples[0].attention)
    counts = np.zeros(n_tok, dtype=np.int64)
    rows = []
    for i, s in enumerate(samples):
        if len(s.attention) != n_tok:
            raise ValueError("all samples must probe the same number of special tokens")
        best = superior_token(s.attention, s.gt, s.frame_size, epsilon)
        counts[best] += 1
        rows.append({"sample": s.sample_id or str(i), "superior_token": best})
    freq = tuple(float(c) / len(samples) for c in counts)
    return GtiReport(samples[0].attention.token_labels, hit_ratio=freq, rows=tuple(rows))


def top_proposal(amap: GroundingAttentionMap, proposals: Sequence[TrackProposal],
                 frame_size: tuple[float, float]) -> int:
    from .grounding import select_track, track_score

    return select_track(track_score(amap, proposals, frame_size))


def rank_accuracy_study(samples: Sequence[GtiSample]) -> GtiReport:
    """Acc@0.5 of the proposal picked by the rank-r most activated token, per rank r."""
    if not samples:
        raise NoSamplesError()
    n_tok = len(samples[0].attention)
    hits = np.zeros(n_tok, dtype=np.int64)
    rows = []
    for i, s in enumerate(samples):
        if not s.proposals:
            raise ValueError(f"sample {s.sample_id or i} has no proposals")
        ranking = activation_ranking(s.attention)
        row = {"sample": s.sample_id or str(i)}
        for r, tok in enumerate(ranking):
            p = top_proposal(s.attention.maps[tok], s.proposals, s.frame_size)
            hit = track_iou(s.proposals[p], s.gt) >= ACC_IOU
            hits[r] += hit
            row[f"rank{r}_token"] = tok
            row[f"rank{r}_hit"] = int(hit)
        rows.append(row)
    acc = tuple(float(h) / len(samples) for h in hits)
    return GtiReport(samples[0].attention.token_labels, rank_accuracy=acc, rows=tuple(rows))
