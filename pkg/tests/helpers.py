"""Builders for scripted fixtures and matching manifests."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from stvg.backend.scripted import FixtureEntry, write_fixture
from stvg.core import BoundingBox, TokenLayout

LOGITS = {"yes": 0.5, "no": -0.5, "maybe": -2.0, "there": -3.0, "a": -3.0, "the": -3.0, "man": -4.0, "woman": -4.0}


def raw_from_maps(maps: Sequence[np.ndarray], layers: int = 1, heads: int = 1, n_sys: int = 1, n_query: int = 2,
                  rng: Optional[np.random.Generator] = None) -> tuple[np.ndarray, TokenLayout]:
    """Attention whose layer/head mean over special rows equals ``maps``.

    With more than one layer/head, per-copy noise is added and cancels in
    the mean only approximately, so exact planting needs ``layers=heads=1``.
    """
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    t, h, w = maps[0].shape
    m = t * h * w
    layout = TokenLayout(n_sys, m, n_query, len(maps), (t, h, w))
    n = layout.total
    raw = np.zeros((layers, heads, n, n))
    if rng is not None:
        raw += rng.random(raw.shape) * 0.01
    for r, amap in enumerate(maps):
        raw[:, :, layout.role_slice.start + r, layout.visual_slice] = amap.reshape(-1)
    return raw, layout


def write_case(root: Path, clip_id: str, frames: int, width: int, height: int,
               tracks: Mapping[str, Mapping[int, Sequence[float]]], query: str,
               gt: Optional[tuple[int, int, Sequence[Sequence[float]]]] = None,
               manifest_entries: Optional[list] = None, query_id: Optional[str] = None) -> dict:
    """Write one proposals file and return its manifest entry (appended when a list is given)."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "proposals").mkdir(exist_ok=True)
    prop = {"tracks": [{"id": tid, "boxes": {str(f): list(b) for f, b in boxes.items()}}
                       for tid, boxes in tracks.items()]}
    (root / "proposals" / f"{clip_id}.json").write_text(json.dumps(prop))
    entry = {"clip_id": clip_id, "frames": frames, "width": width, "height": height,
             "query": query, "proposals": f"proposals/{clip_id}.json"}
    if query_id is not None:
        entry["query_id"] = query_id
    if gt is not None:
        entry["gt"] = {"t_s": gt[0], "t_e": gt[1], "boxes": [list(b) for b in gt[2]]}
    if manifest_entries is not None:
        manifest_entries.append(entry)
    return entry


def write_manifest(root: Path, entries: list) -> Path:
    path = root / "manifest.json"
    path.write_text(json.dumps({"entries": entries}, indent=1))
    return path


def fixture_entry(clip_id: str, prompt: str, raw: np.ndarray, layout: TokenLayout, reversed: bool = False,
                  logits: Optional[Mapping[str, float]] = None) -> FixtureEntry:
    return FixtureEntry(clip_id, prompt, layout, raw.astype(np.float32), dict(logits or LOGITS), reversed)


def save_fixture(root: Path, entries: Sequence[FixtureEntry]) -> Path:
    return write_fixture(root / "fixture", entries)


def box(x1: float, y1: float, x2: float, y2: float) -> BoundingBox:
    return BoundingBox(x1, y1, x2, y2)
