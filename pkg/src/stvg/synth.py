"""Synthetic manifests and proposal files for desk-scale runs and tests."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import BoundingBox, Tube
from .evalkit import DatasetManifest, ManifestEntry, SourceTrack, save_manifest, save_proposals
from .core import QueryRecord

QUERIES = (
    "a man on the left of the man in the orange shirt walks to the table",
    "the woman in the red dress turns around",
    "the man who is wearing a hat sits down on the sofa",
    "a child in a blue coat runs towards the door",
    "the old man with glasses picks up the cup",
)


def _random_box(rng: np.random.Generator, width: int, height: int) -> BoundingBox:
    w = rng.uniform(0.15, 0.5) * width
    h = rng.uniform(0.2, 0.6) * height
    x = rng.uniform(0, width - w)
    y = rng.uniform(0, height - h)
    return BoundingBox(round(x, 2), round(y, 2), round(x + w, 2), round(y + h, 2))


def make_manifest(out_dir: str | Path, n_samples: int = 5, seed: int = 0, frames: int = 20,
                  width: int = 320, height: int = 240, n_tracks: int = 3) -> Path:
    """Write ``manifest.json`` plus one proposals file per clip; the ground truth is a
    sub-span of the first track."""
    out_dir = Path(out_dir)
    (out_dir / "proposals").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_samples):
        clip_id = f"clip{i:03d}"
        tracks = []
        for k in range(n_tracks):
            start = int(rng.integers(0, frames // 3))
            end = int(rng.integers(2 * frames // 3, frames))
            box = _random_box(rng, width, height)
            boxes = {}
            for f in range(start, end + 1):
                dx = float(rng.normal(0, 2))
                dy = float(rng.normal(0, 2))
                b = BoundingBox(max(box.x_min + dx, 0), max(box.y_min + dy, 0),
                                min(box.x_max + dx, width), min(box.y_max + dy, height))
                boxes[f] = BoundingBox(*(round(v, 2) for v in b.as_tuple()))
            tracks.append(SourceTrack(f"trk{k}", boxes))
        prop_path = out_dir / "proposals" / f"{clip_id}.json"
        save_proposals(prop_path, tracks)
        target = tracks[0]
        keys = sorted(target.boxes)
        t_s = keys[int(rng.integers(0, len(keys) // 3 + 1))]
        t_e = keys[-1 - int(rng.integers(0, len(keys) // 3 + 1))]
        if t_e < t_s:
            t_s, t_e = t_e, t_s
        gt = Tube(t_s, t_e, tuple(target.boxes[f] for f in range(t_s, t_e + 1)))
        query = QueryRecord(f"q{i:03d}", QUERIES[i % len(QUERIES)])
        entries.append(ManifestEntry(clip_id, frames, width, height, query, gt, prop_path))
    path = out_dir / "manifest.json"
    save_manifest(path, DatasetManifest(tuple(entries)))
    return path
