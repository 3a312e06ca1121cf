"""Batch orchestration over a dataset manifest."""
from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .backend import CachingBackend, LatentPrompt, ScriptedBackend, ToyBackend
from .backend.base import Backend
from .core import GroundingAttentionMap, PipelineConfig, TrackProposal, Tube, VideoClip
from .dsth import (
    DecompositionClient,
    FixtureClient,
    SubQueryPair,
    decompose_query,
    highlighted_attention,
    make_interrogative,
    optimize_prompt,
)
from .errors import StvgError
from .evalkit import (
    EvalSummary,
    ManifestEntry,
    load_manifest,
    resample_gt,
    resample_tracks,
    summarize,
    track_iou,
    tube_to_json,
    viou,
    write_metrics_csv,
    write_results,
)
from .grounding import Prediction, joint_inference
from .tas import assemble_spatial, consistency_score, reverse_frames

log = logging.getLogger(__name__)

RESULTS_NAME = "results.json"
METRICS_NAME = "metrics.csv"
FAILURE_EXIT_FRACTION = 0.5


class ConfigError(StvgError, ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    manifest: Path
    backend: str
    out_dir: Path
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    enable_gti_selection: bool = True
    enable_spatial_prompt: bool = True
    enable_temporal_prompt: bool = True
    enable_tas: bool = True
    cache_dir: Optional[Path] = None
    heatmaps: bool = False
    workers: int = 1
    decompositions: Optional[Path] = None

    @property
    def enable_dsth(self) -> bool:
        return self.enable_spatial_prompt or self.enable_temporal_prompt

    def describe(self) -> dict[str, Any]:
        """Settings that influence results (paths to outputs and caches excluded)."""
        p = self.pipeline
        return {
            "backend": self.backend,
            "manifest": Path(self.manifest).name,
            "n_frames_sampled": p.n_frames_sampled,
            "top_k_frames": p.top_k_frames,
            "lra_steps": p.lra.n_ep,
            "lra_step_size": repr(p.lra.step_size),
            "lra_init": p.lra.init,
            "epsilon": repr(p.epsilon),
            "gti": self.enable_gti_selection,
            "spatial_prompt": self.enable_spatial_prompt,
            "temporal_prompt": self.enable_temporal_prompt,
            "tas": self.enable_tas,
            "decompositions": Path(self.decompositions).name if self.decompositions else None,
        }

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.describe(), sort_keys=True).encode()).hexdigest()[:16]


def make_backend(spec: str) -> Backend:
    kind, _, arg = spec.partition(":")
    if kind == "toy":
        try:
            return ToyBackend(int(arg or 0))
        except ValueError:
            raise ConfigError(f"toy backend seed must be an integer, got {arg!r}") from None
    if kind == "scripted":
        if not arg or not Path(arg).is_dir():
            raise ConfigError(f"scripted backend needs an existing fixture directory, got {arg!r}")
        try:
            return ScriptedBackend(arg)
        except StvgError as exc:
            raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown backend {spec!r}; expected toy:SEED or scripted:DIR")


# --- heatmaps -------------------------------------------------------------

def heatmap_pixels(frame: np.ndarray) -> np.ndarray:
    """Min-max normalize one ``(h, w)`` frame to 0..255; a constant frame is all 128."""
    lo, hi = float(frame.min()), float(frame.max())
    if hi <= lo:
        return np.full(frame.shape, 128, dtype=np.int64)
    return np.floor((frame - lo) / (hi - lo) * 255.0 + 0.5).astype(np.int64)


def emit_heatmap(amap: GroundingAttentionMap, frame_index: int, out_path: str | Path) -> Path:
    """Write one frame of a map as a plain-text (P2) graymap, one pixel per grid cell."""
    pixels = heatmap_pixels(amap.values[frame_index])
    h, w = pixels.shape
    lines = ["P2", f"{w} {h}", "255"] + [" ".join(str(int(v)) for v in row) for row in pixels]
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return out_path


# --- per-sample work ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class SampleInputs:
    entry: ManifestEntry
    video: VideoClip
    proposals: tuple[TrackProposal, ...]
    gt: Optional[Tube]


def prepare(entry: ManifestEntry, n_frames: int) -> SampleInputs:
    video = entry.video(n_frames)
    proposals = tuple(resample_tracks(entry.proposals(), video.frame_indices))
    gt = resample_gt(entry.gt_source, video.frame_indices) if entry.gt_source is not None else None
    return SampleInputs(entry, video, proposals, gt)


def training_free_predict(backend: Backend, video: VideoClip, query_text: str,
                          proposals: Sequence[TrackProposal], k: int, select_token: bool = True) -> Prediction:
    """One untuned forward pass on the raw query drives both track and span selection."""
    amap = highlighted_attention(backend, video, query_text, None, select_token=select_token)
    return joint_inference(amap, amap, proposals, video.frame_size, k)


def _lra_record(latent: Optional[LatentPrompt]) -> Optional[dict[str, Any]]:
    if latent is None:
        return None
    return {"losses": list(latent.losses), "gaps": list(latent.gaps), "numerical_failure": latent.numerical_failure}


def _tune(backend: Backend, video: VideoClip, prompt: str, cfg: RunConfig, reverse: bool = False
          ) -> Optional[LatentPrompt]:
    if not backend.differentiable:
        log.warning("backend %s is not differentiable; prompt tuning skipped", backend.name)
        return None
    return optimize_prompt(backend, video, prompt, cfg.pipeline.lra, reverse=reverse)


def process_sample(backend: Backend, inputs: SampleInputs, cfg: RunConfig,
                   client: Optional[DecompositionClient] = None) -> tuple[dict[str, Any], dict[str, GroundingAttentionMap]]:
    video, query = inputs.video, inputs.entry.query
    select = cfg.enable_gti_selection
    record: dict[str, Any] = {"query_id": query.query_id, "clip_id": video.clip_id,
                              "source_frames": list(video.frame_indices)}

    pair: Optional[SubQueryPair] = decompose_query(query, client) if cfg.enable_dsth else None
    if pair is not None:
        record["decomposition"] = {"attribute": pair.attribute_text, "action": pair.action_text,
                                   "provenance": pair.provenance.value}

    # spatial branch
    sp_text = make_interrogative(pair.attribute_text, "spatial").text if cfg.enable_spatial_prompt else query.text
    sp_latent = _tune(backend, video, sp_text, cfg) if cfg.enable_spatial_prompt else None
    spatial = highlighted_attention(backend, video, sp_text, sp_latent, select_token=select)
    maps = {"spatial": spatial}
    record["spatial"] = {"prompt": sp_text, "token": spatial.token_index, "lra": _lra_record(sp_latent)}
    if cfg.enable_tas:
        rev_latent = _tune(backend, video, sp_text, cfg, reverse=True) if cfg.enable_spatial_prompt else None
        spatial_rev = highlighted_attention(backend, video, sp_text, rev_latent, reverse=True, select_token=select)
        cons = consistency_score(spatial, reverse_frames(spatial_rev), inputs.proposals, video.frame_size) \
            if inputs.proposals else None
        spatial = assemble_spatial(spatial, spatial_rev)
        maps["spatial"] = spatial
        record["tas"] = {"reversed_token": spatial_rev.token_index, "lra": _lra_record(rev_latent),
                         "consistency": None if cons is None else cons.value}

    # temporal branch
    tp_text = make_interrogative(pair.action_text, "temporal").text if cfg.enable_temporal_prompt else query.text
    tp_latent = _tune(backend, video, tp_text, cfg) if cfg.enable_temporal_prompt else None
    temporal = highlighted_attention(backend, video, tp_text, tp_latent, select_token=select)
    maps["temporal"] = temporal
    record["temporal"] = {"prompt": tp_text, "token": temporal.token_index, "lra": _lra_record(tp_latent)}

    pred = joint_inference(spatial, temporal, inputs.proposals, video.frame_size, cfg.pipeline.top_k_frames)
    record["track"] = {"index": pred.track_index, "id": inputs.proposals[pred.track_index].track_id,
                       "scores": [float(s) for s in pred.track_scores.scores]}
    record["frame_scores"] = [float(s) for s in pred.frame_scores.scores]
    record["selected_frames"] = list(pred.selected_frames)
    record["tube"] = tube_to_json(pred.tube)
    if inputs.gt is not None:
        record["gt"] = tube_to_json(inputs.gt)
        record["viou"] = viou(pred.tube, inputs.gt)
        record["track_iou"] = track_iou(inputs.proposals[pred.track_index], inputs.gt)
    record["status"] = "ok"
    return record, maps


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", text)


@dataclass
class RunOutcome:
    summary: Optional[EvalSummary]
    n_total: int
    n_failed: int
    results_path: Path
    metrics_path: Path

    @property
    def majority_failed(self) -> bool:
        return self.n_total > 0 and self.n_failed > FAILURE_EXIT_FRACTION * self.n_total


def run_pipeline(cfg: RunConfig, backend: Optional[Backend] = None,
                 client: Optional[DecompositionClient] = None) -> RunOutcome:
    """Ground every manifest entry, then write results JSON, metrics CSV and optional heatmaps.

    A failing sample is recorded with its error and scored vIoU 0; the run
    goes on.
    """
    manifest = load_manifest(cfg.manifest)
    inner = backend if backend is not None else make_backend(cfg.backend)
    cached = CachingBackend(inner, cfg.cache_dir)
    if client is None and cfg.decompositions is not None:
        client = FixtureClient(cfg.decompositions)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(entry: ManifestEntry):
        try:
            inputs = prepare(entry, cfg.pipeline.n_frames_sampled)
            return process_sample(cached, inputs, cfg, client)
        except (StvgError, ValueError, KeyError, ArithmeticError) as exc:
            log.error("sample %s failed: %s", entry.query.query_id, exc)
            return ({"query_id": entry.query.query_id, "clip_id": entry.clip_id, "status": "failed",
                     "error": f"{type(exc).__name__}: {exc}"}, {})

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outputs = list(pool.map(work, manifest.entries))
    else:
        outputs = [work(e) for e in manifest.entries]

    records = [r for r, _ in outputs]
    if cfg.heatmaps:
        for record, maps in outputs:
            for kind, amap in maps.items():
                for t in range(amap.shape[0]):
                    emit_heatmap(amap, t, out_dir / "heatmaps" / _safe_name(record["query_id"]) / f"{kind}_t{t:03d}.pgm")

    scored = [(r["query_id"], float(r.get("viou", 0.0)) if r["status"] == "ok" else 0.0)
              for r in records if r["status"] != "ok" or "viou" in r]
    summary = summarize(scored) if scored else None
    n_failed = sum(r["status"] != "ok" for r in records)

    results = {
        "header": {"fingerprint": cfg.fingerprint(), "config": cfg.describe(), "backend": cached.fingerprint()},
        "summary": None if summary is None else {**summary.to_json(), "n_failed": n_failed},
        "samples": records,
    }
    results_path = out_dir / RESULTS_NAME
    write_results(results_path, results)
    rows = [{"query_id": r["query_id"], "clip_id": r["clip_id"], "status": r["status"],
             "viou": r.get("viou"), "t_s": r.get("tube", {}).get("t_s"), "t_e": r.get("tube", {}).get("t_e"),
             "track_id": r.get("track", {}).get("id"), "error": r.get("error")} for r in records]
    metrics_path = out_dir / METRICS_NAME
    write_metrics_csv(metrics_path, rows, ["query_id", "clip_id", "status", "viou", "t_s", "t_e", "track_id", "error"])
    return RunOutcome(summary, len(records), n_failed, results_path, metrics_path)


# --- pilot studies over a manifest ---------------------------------------

STUDIES = ("hit-ratio", "rank-acc", "consistency")


def run_study(kind: str, cfg: RunConfig, backend: Optional[Backend] = None) -> Path:
    """Grounding-token or temporal-consistency analysis; returns the main output file."""
    from .gti import GtiSample, aggregate_attention, hit_ratio_study, rank_accuracy_study
    from .tas import consistency_accuracy_study, write_study_csv

    if kind not in STUDIES:
        raise ConfigError(f"unknown study {kind!r}; expected one of {', '.join(STUDIES)}")
    manifest = load_manifest(cfg.manifest)
    cached = CachingBackend(backend if backend is not None else make_backend(cfg.backend), cfg.cache_dir)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_frames = cfg.pipeline.n_frames_sampled

    if kind in ("hit-ratio", "rank-acc"):
        samples = []
        for entry in manifest.entries:
            inputs = prepare(entry, n_frames)
            if inputs.gt is None:
                continue
            session = cached.run(inputs.video, entry.query.text)
            sta = aggregate_attention(session.raw_attention, session.layout, session.token_labels)
            samples.append(GtiSample(sta, inputs.gt, inputs.video.frame_size, inputs.proposals, entry.query.query_id))
        if kind == "hit-ratio":
            report = hit_ratio_study(samples, cfg.pipeline.epsilon)
        else:
            report = rank_accuracy_study([s for s in samples if s.proposals])
        stem = kind.replace("-", "_")
        report.write(out_dir / f"{stem}.json", out_dir / f"{stem}.csv")
        return out_dir / f"{stem}.json"

    client = FixtureClient(cfg.decompositions) if cfg.decompositions else None
    pairs = []
    for entry in manifest.entries:
        inputs = prepare(entry, n_frames)
        if inputs.gt is None or not inputs.proposals:
            continue
        text = entry.query.text
        if cfg.enable_spatial_prompt:
            text = make_interrogative(decompose_query(entry.query, client).attribute_text).text
        lat = _tune(cached, inputs.video, text, cfg) if cfg.enable_spatial_prompt else None
        lat_rev = _tune(cached, inputs.video, text, cfg, reverse=True) if cfg.enable_spatial_prompt else None
        a = highlighted_attention(cached, inputs.video, text, lat, select_token=cfg.enable_gti_selection)
        a_rev = highlighted_attention(cached, inputs.video, text, lat_rev, reverse=True,
                                      select_token=cfg.enable_gti_selection)
        cons = consistency_score(a, reverse_frames(a_rev), inputs.proposals, inputs.video.frame_size)
        pred = joint_inference(a, a, inputs.proposals, inputs.video.frame_size, cfg.pipeline.top_k_frames)
        hit = float(track_iou(inputs.proposals[pred.track_index], inputs.gt) >= 0.5)
        pairs.append((cons.value, hit))
    stats = consistency_accuracy_study(pairs)
    path = out_dir / "consistency.csv"
    write_study_csv(path, stats)
    return path
