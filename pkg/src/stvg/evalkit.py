"""Tube metrics, manifest/proposal ingestion and result persistence."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import BoundingBox, QueryRecord, TrackProposal, Tube, VideoClip, sample_frames
from .errors import NoSamplesError, ParseError

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.3, 0.5)


# --- metrics -------------------------------------------------------------

def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def viou(pred: Tube, gt: Tube) -> float:
    """Sum of per-frame IoU over shared frames, divided by the union of spans."""
    s_i = range(max(pred.t_s, gt.t_s), min(pred.t_e, gt.t_e) + 1)
    if len(s_i) == 0:
        return 0.0
    s_u = max(pred.t_e, gt.t_e) - min(pred.t_s, gt.t_s) + 1
    return sum(iou(pred.box_at(t), gt.box_at(t)) for t in s_i) / s_u


def track_iou(track: TrackProposal, gt: Tube) -> float:
    """Mean IoU over the ground-truth frames; frames where the track is absent count 0."""
    total = 0.0
    for t in gt.frames:
        b = track.boxes[t] if t < track.frame_count else None
        if b is not None:
            total += iou(b, gt.box_at(t))
    return total / len(gt.frames)


@dataclass(frozen=True)
class EvalSummary:
    m_viou: float
    viou_at: dict[float, float]
    per_sample: tuple[tuple[str, float], ...]

    def to_json(self) -> dict[str, Any]:
        return {
            "m_viou": self.m_viou,
            "viou_at": {f"{k:g}": v for k, v in sorted(self.viou_at.items())},
            "n_samples": len(self.per_sample),
        }


def summarize(per_sample: Sequence[tuple[str, float]] | Sequence[float],
              thresholds: Iterable[float] = DEFAULT_THRESHOLDS) -> EvalSummary:
    """Mean vIoU and the fraction of samples with vIoU strictly above each threshold."""
    if len(per_sample) == 0:
        raise NoSamplesError()
    pairs = tuple((str(i), float(x)) if not isinstance(x, tuple) else (str(x[0]), float(x[1]))
                  for i, x in enumerate(per_sample))
    values = [v for _, v in pairs]
    m = math.fsum(values) / len(values)
    at = {float(r): sum(v > r for v in values) / len(values) for r in thresholds}
    return EvalSummary(m, at, pairs)


# --- manifest & proposals -------------------------------------------------

def _parse_box(raw: Any, path, where: str, width: float, height: float) -> BoundingBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ParseError(path, where, "box must be [x1, y1, x2, y2]")
    try:
        x1, y1, x2, y2 = (float(v) for v in raw)
    except (TypeError, ValueError):
        raise ParseError(path, where, f"non-numeric box {raw!r}") from None
    if not all(map(math.isfinite, (x1, y1, x2, y2))):
        raise ParseError(path, where, f"non-finite box {raw!r}")
    if x1 >= x2:
        raise ParseError(path, f"{where}.x_min", f"x_min {x1} >= x_max {x2}")
    if y1 >= y2:
        raise ParseError(path, f"{where}.y_min", f"y_min {y1} >= y_max {y2}")
    box = BoundingBox(x1, y1, x2, y2)
    if not box.within(width, height):
        if x2 <= 0 or y2 <= 0 or x1 >= width or y1 >= height:
            raise ParseError(path, where, f"box {raw!r} lies outside the {width}x{height} frame")
        log.warning("%s: %s clipped to %gx%g frame", path, where, width, height)
        box = box.clipped(width, height)
    return box


@dataclass(frozen=True)
class SourceTrack:
    """A tracker output on the source-frame axis."""

    track_id: str
    boxes: Mapping[int, BoundingBox]


def load_proposals(path: str | Path, width: float, height: float) -> list[SourceTrack]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(path, "file", str(exc)) from exc
    if not isinstance(data, dict) or not isinstance(data.get("tracks"), list):
        raise ParseError(path, "tracks", "expected an object with a 'tracks' list")
    out = []
    seen = set()
    for i, rec in enumerate(data["tracks"]):
        where = f"tracks[{i}]"
        if not isinstance(rec, dict) or "id" not in rec or not isinstance(rec.get("boxes"), dict):
            raise ParseError(path, where, "track needs 'id' and a 'boxes' object")
        tid = str(rec["id"])
        if tid in seen:
            raise ParseError(path, f"{where}.id", f"duplicate track id {tid!r}")
        seen.add(tid)
        boxes = {}
        for key, raw in rec["boxes"].items():
            try:
                frame = int(key)
            except ValueError:
                raise ParseError(path, f"{where}.boxes", f"frame key {key!r} is not an integer") from None
            if frame < 0:
                raise ParseError(path, f"{where}.boxes", f"negative frame index {frame}")
            boxes[frame] = _parse_box(raw, path, f"{where}.boxes[{key!r}]", width, height)
        if not boxes:
            raise ParseError(path, f"{where}.boxes", "track has no boxes")
        out.append(SourceTrack(tid, dict(sorted(boxes.items()))))
    return out


def save_proposals(path: str | Path, tracks: Sequence[SourceTrack]) -> None:
    data = {"tracks": [{"id": t.track_id, "boxes": {str(f): list(b.as_tuple()) for f, b in t.boxes.items()}}
                       for t in tracks]}
    Path(path).write_text(json.dumps(data, indent=1))


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    source_frames: int
    width: int
    height: int
    query: QueryRecord
    gt_source: Optional[Tube]
    proposals_path: Path

    def video(self, n_frames_sampled: int) -> VideoClip:
        return VideoClip(self.clip_id, tuple(sample_frames(self.source_frames, n_frames_sampled)),
                         self.width, self.height)

    def proposals(self) -> list[SourceTrack]:
        return load_proposals(self.proposals_path, self.width, self.height)


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    path: Optional[Path] = None

    def __post_init__(self) -> None:
        ids = [e.clip_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("clip_ids must be unique")


def _parse_gt(raw: Any, path, where: str, frames: int, width: float, height: float) -> Tube:
    if not isinstance(raw, dict):
        raise ParseError(path, where, "gt must be an object")
    for key in ("t_s", "t_e", "boxes"):
        if key not in raw:
            raise ParseError(path, f"{where}.{key}", "missing field")
    t_s, t_e = raw["t_s"], raw["t_e"]
    if not (isinstance(t_s, int) and isinstance(t_e, int)) or not 0 <= t_s <= t_e < frames:
        raise ParseError(path, f"{where}.t_s", f"need 0 <= t_s <= t_e < frames ({t_s}, {t_e}, {frames})")
    boxes = raw["boxes"]
    if not isinstance(boxes, list) or len(boxes) != t_e - t_s + 1:
        raise ParseError(path, f"{where}.boxes", f"expected {t_e - t_s + 1} boxes")
    parsed = [_parse_box(b, path, f"{where}.boxes[{i}]", width, height) for i, b in enumerate(boxes)]
    return Tube(t_s, t_e, tuple(parsed))


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(path, "file", str(exc)) from exc
    if not isinstance(data, dict) or not isinstance(data.get("entries"), list):
        raise ParseError(path, "entries", "expected an object with an 'entries' list")
    entries = []
    seen: set[str] = set()
    for i, rec in enumerate(data["entries"]):
        where = f"entries[{i}]"
        if not isinstance(rec, dict):
            raise ParseError(path, where, "entry must be an object")
        for key in ("clip_id", "frames", "width", "height", "query", "proposals"):
            if key not in rec:
                raise ParseError(path, f"{where}.{key}", "missing field")
        clip_id = str(rec["clip_id"])
        if clip_id in seen:
            raise ParseError(path, f"{where}.clip_id", f"duplicate clip_id {clip_id!r}")
        seen.add(clip_id)
        frames, width, height = rec["frames"], rec["width"], rec["height"]
        for key, val in (("frames", frames), ("width", width), ("height", height)):
            if not isinstance(val, int) or val <= 0:
                raise ParseError(path, f"{where}.{key}", f"must be a positive integer, got {val!r}")
        text = rec["query"]
        if not isinstance(text, str) or not text.strip():
            raise ParseError(path, f"{where}.query", "query must be a non-empty string")
        gt = _parse_gt(rec["gt"], path, f"{where}.gt", frames, width, height) if rec.get("gt") is not None else None
        proposals_path = (path.parent / rec["proposals"]).resolve()
        if not proposals_path.exists():
            raise ParseError(path, f"{where}.proposals", f"file not found: {rec['proposals']}")
        query = QueryRecord(str(rec.get("query_id", clip_id)), text)
        entries.append(ManifestEntry(clip_id, frames, width, height, query, gt, proposals_path))
    return DatasetManifest(tuple(entries), path)


def save_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    path = Path(path)
    out = []
    for e in manifest.entries:
        rec: dict[str, Any] = {
            "clip_id": e.clip_id, "frames": e.source_frames, "width": e.width, "height": e.height,
            "query_id": e.query.query_id, "query": e.query.text,
            "proposals": str(Path(e.proposals_path).resolve().relative_to(path.parent.resolve()))
            if Path(e.proposals_path).resolve().is_relative_to(path.parent.resolve()) else str(e.proposals_path),
        }
        if e.gt_source is not None:
            rec["gt"] = {"t_s": e.gt_source.t_s, "t_e": e.gt_source.t_e,
                         "boxes": [list(b.as_tuple()) for b in e.gt_source.boxes]}
        out.append(rec)
    path.write_text(json.dumps({"entries": out}, indent=1))


# --- source axis -> sampled axis -----------------------------------------

def resample_gt(gt: Tube, frame_indices: Sequence[int]) -> Tube:
    """Ground truth on the sampled-frame axis.

    Sampled frames whose source index lies inside the span keep their box;
    when the span falls between two samples, the sampled frame nearest the
    span center is used with the box of its nearest source frame.
    """
    inside = [s for s, f in enumerate(frame_indices) if gt.t_s <= f <= gt.t_e]
    if inside:
        return Tube(inside[0], inside[-1], tuple(gt.box_at(frame_indices[s]) for s in inside))
    center = (gt.t_s + gt.t_e) / 2.0
    s = min(range(len(frame_indices)), key=lambda i: (abs(frame_indices[i] - center), i))
    src = min(max(frame_indices[s], gt.t_s), gt.t_e)
    return Tube(s, s, (gt.box_at(src),))


def resample_tracks(tracks: Sequence[SourceTrack], frame_indices: Sequence[int]) -> list[TrackProposal]:
    """Exact source-frame lookup; tracks invisible on every sampled frame are dropped."""
    out = []
    for t in tracks:
        boxes = tuple(t.boxes.get(f) for f in frame_indices)
        if any(b is not None for b in boxes):
            out.append(TrackProposal(t.track_id, boxes))
        else:
            log.info("track %s has no box on any sampled frame; dropped", t.track_id)
    return out


# --- results --------------------------------------------------------------

def dumps6(obj: Any, indent: int = 1, _level: int = 0) -> str:
    """JSON text with every float written with exactly six decimals."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"cannot serialize non-finite float {x}")
        text = f"{x:.6f}"
        return "0.000000" if text == "-0.000000" else text
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {dumps6(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps6(v) for v in obj) + "]"
        items = [pad + dumps6(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def tube_to_json(tube: Tube) -> dict[str, Any]:
    return {"t_s": tube.t_s, "t_e": tube.t_e, "boxes": [list(b.as_tuple()) for b in tube.boxes]}


def tube_from_json(raw: Mapping[str, Any]) -> Tube:
    return Tube(int(raw["t_s"]), int(raw["t_e"]), tuple(BoundingBox(*b) for b in raw["boxes"]))


def write_results(path: str | Path, results: Mapping[str, Any]) -> None:
    Path(path).write_text(dumps6(results) + "\n", encoding="utf-8")


def load_results(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(path, "file", str(exc)) from exc
    if not isinstance(data, dict) or not isinstance(data.get("samples"), list):
        raise ParseError(path, "samples", "expected a results object with a 'samples' list")
    return data


def evaluate_results(path: str | Path, thresholds: Iterable[float] = DEFAULT_THRESHOLDS) -> EvalSummary:
    """Recompute metrics from persisted tubes; failed samples score 0."""
    data = load_results(path)
    pairs = []
    for i, s in enumerate(data["samples"]):
        qid = str(s.get("query_id", i))
        if s.get("status") != "ok" or s.get("tube") is None or s.get("gt") is None:
            pairs.append((qid, 0.0))
            continue
        try:
            pairs.append((qid, viou(tube_from_json(s["tube"]), tube_from_json(s["gt"]))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(path, f"samples[{i}]", str(exc)) from exc
    return summarize(pairs, thresholds)


def write_metrics_csv(path: str | Path, rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_csv_cell(r.get(c)) for c in columns])


def _csv_cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)
