"""Temporal-augmented assembling.

A spatial query describes a static target, so its grounding should not
change when the frames are played backwards.  The spatial branch is run a
second time on reversed frames; the two maps are re-aligned, averaged, and
their agreement on each proposal gives a temporal-consistency score.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, TypeVar

import numpy as np

from . import kernels
from .backend.base import LatentPrompt
from .core import GroundingAttentionMap, TrackProposal
from .errors import InsufficientSamplesError, NoProposalsError
from .grounding import proposal_rects

N_GROUPS = 10

T = TypeVar("T", np.ndarray, GroundingAttentionMap, LatentPrompt)


def reverse_frames(x: T, n_frames: Optional[int] = None) -> T:
    """Reverse the frame axis.

    Arrays and maps carry frames on their first axis.  A latent prompt is
    flattened over ``(frames * cells, embed)`` and needs ``n_frames``.
    """
    if isinstance(x, GroundingAttentionMap):
        return GroundingAttentionMap(x.values[::-1], x.token_index)
    if isinstance(x, LatentPrompt):
        if n_frames is None:
            raise ValueError("n_frames is required to reverse a latent prompt")
        m, e = x.shape
        if m % n_frames:
            raise ValueError(f"{m} visual tokens do not split into {n_frames} frames")
        v = x.values.reshape(n_frames, m // n_frames, e)[::-1].reshape(m, e)
        return LatentPrompt(v)
    return np.ascontiguousarray(np.asarray(x)[::-1])


@dataclass(frozen=True)
class ConsistencyScore:
    value: float
    per_proposal: tuple[float, ...]


def consistency_score(a: GroundingAttentionMap, a_rev_aligned: GroundingAttentionMap,
                      proposals: Sequence[TrackProposal], frame_size: tuple[float, float]) -> ConsistencyScore:
    """Best agreement between the two maps inside any single proposal.

    ``a_rev_aligned`` must already be back in original frame order.
    """
    if a.shape != a_rev_aligned.shape:
        raise ValueError("maps must share one shape")
    if not proposals:
        raise NoProposalsError()
    per = kernels.pair_track_max(a.values, a_rev_aligned.values, proposal_rects(proposals, frame_size, a.grid))
    return ConsistencyScore(float(per.max()), tuple(float(v) for v in per))


def assemble_spatial(a: GroundingAttentionMap, a_rev: GroundingAttentionMap) -> GroundingAttentionMap:
    """Mean of ``a`` and the re-aligned map from the reversed run."""
    if a.shape != a_rev.shape:
        raise ValueError("maps must share one shape")
    aligned = a_rev.values[::-1]
    return GroundingAttentionMap((a.values + aligned) / 2.0, a.token_index)


@dataclass(frozen=True)
class GroupStat:
    group_index: int
    mean_consistency: float
    mean_accuracy: float
    n_samples: int


def group_sizes(n: int, groups: int = N_GROUPS) -> list[int]:
    base, extra = divmod(n, groups)
    return [base + (1 if g < extra else 0) for g in range(groups)]


def consistency_accuracy_study(samples: Sequence[tuple[float, float]], groups: int = N_GROUPS) -> list[GroupStat]:
    """Mean accuracy per group of samples ordered by descending consistency.

    ``samples`` are ``(consistency, accuracy)`` pairs; accuracy is usually a
    0/1 hit.  Ties in consistency keep input order.
    """
    if len(samples) < groups:
        raise InsufficientSamplesError(len(samples), groups)
    order = sorted(range(len(samples)), key=lambda i: -samples[i][0])
    out = []
    start = 0
    for g, size in enumerate(group_sizes(len(samples), groups)):
        idx = order[start:start + size]
        start += size
        cons = [samples[i][0] for i in idx]
        acc = [samples[i][1] for i in idx]
        out.append(GroupStat(g, float(np.mean(cons)), float(np.mean(acc)), size))
    return out


def write_study_csv(path: str | Path, stats: Sequence[GroupStat]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group_index", "mean_consistency", "mean_accuracy", "n_samples"])
        for s in stats:
            w.writerow([s.group_index, f"{s.mean_consistency:.6f}", f"{s.mean_accuracy:.6f}", s.n_samples])
