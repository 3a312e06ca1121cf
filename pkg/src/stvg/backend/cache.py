"""On-disk cache of backend forward passes.

Keys combine the backend fingerprint, the clip and its sampled frames, the
prompt hash, the latent content hash and the frame-reversal flag, so tuned
and untuned attentions never collide.  Entries are written to a temporary
file and renamed into place; readers never observe partial entries.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from ..core import RawAttention, TokenLayout, VideoClip
from .base import Backend, BackendSession, LatentPrompt, LossFn, prompt_sha256

CACHE_ENV = "STVG_CACHE_DIR"


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "stvg"


class CachingBackend:
    """Wraps a backend; ``run`` results are memoized on disk, gradients pass through."""

    def __init__(self, inner: Backend, cache_dir: Optional[str | Path] = None) -> None:
        self.inner = inner
        self.cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.name = inner.name
        self.differentiable = inner.differentiable
        self.hits = 0
        self.misses = 0

    def fingerprint(self) -> str:
        return self.inner.fingerprint()

    def latent_shape(self, video: VideoClip) -> tuple[int, int]:
        return self.inner.latent_shape(video)

    def key(self, video: VideoClip, prompt_text: str, latent: Optional[LatentPrompt], reverse: bool) -> str:
        parts = [
            self.inner.fingerprint(),
            video.clip_id,
            ",".join(map(str, video.frame_indices)),
            f"{video.width_px}x{video.height_px}",
            prompt_sha256(prompt_text),
            "zero" if latent is None else latent.content_hash(),
            "rev" if reverse else "fwd",
        ]
        return hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()

    def _paths(self, key: str) -> tuple[Path, Path]:
        sub = self.cache_dir / key[:2]
        return sub / f"{key}.npy", sub / f"{key}.json"

    def _load(self, key: str) -> Optional[BackendSession]:
        npy, meta_path = self._paths(key)
        if not (npy.exists() and meta_path.exists()):
            return None
        meta = json.loads(meta_path.read_text())
        lay = meta["layout"]
        layout = TokenLayout(lay["n_sys"], lay["m_visual"], lay["n_query"], lay["n_role"], tuple(lay["grid"]))
        attn = np.load(npy, allow_pickle=False)
        # float.hex keeps logits bit-exact across the round trip
        logits = {k: float.fromhex(v) for k, v in meta["logits"]}
        return BackendSession(layout, RawAttention(attn), logits, tuple(meta["token_labels"]),
                              tuple(meta["latent_shape"]), {"reverse": meta["reverse"], "cached": True})

    def _store(self, key: str, session: BackendSession) -> None:
        npy, meta_path = self._paths(key)
        npy.parent.mkdir(parents=True, exist_ok=True)
        lay = session.layout
        meta = {
            "layout": {"n_sys": lay.n_sys, "m_visual": lay.m_visual, "n_query": lay.n_query,
                       "n_role": lay.n_role, "grid": list(lay.grid)},
            "logits": [[k, float(v).hex()] for k, v in session.answer_logits.items()],
            "token_labels": list(session.token_labels),
            "latent_shape": list(session.latent_shape),
            "reverse": bool(session.meta.get("reverse", False)),
        }
        for target, write in ((npy, lambda fh: np.save(fh, np.asarray(session.attention), allow_pickle=False)),
                              (meta_path, lambda fh: fh.write(json.dumps(meta).encode("utf-8")))):
            fd, tmp = tempfile.mkstemp(dir=target.parent, suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                write(fh)
            os.replace(tmp, target)

    def run(self, video: VideoClip, prompt_text: str, latent: Optional[LatentPrompt] = None,
            *, reverse: bool = False) -> BackendSession:
        key = self.key(video, prompt_text, latent, reverse)
        cached = self._load(key)
        if cached is not None:
            self.hits += 1
            return cached
        self.misses += 1
        session = self.inner.run(video, prompt_text, latent, reverse=reverse)
        self._store(key, session)
        return session

    def value_and_grad(self, video: VideoClip, prompt_text: str, latent: LatentPrompt, loss_fn: LossFn,
                       *, reverse: bool = False) -> tuple[float, np.ndarray]:
        return self.inner.value_and_grad(video, prompt_text, latent, loss_fn, reverse=reverse)
