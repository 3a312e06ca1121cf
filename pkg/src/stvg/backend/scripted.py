"""Fixture-driven backend and the on-disk fixture format.

A fixture directory holds ``index.json`` plus one binary per attention
array::

    b"STVGATTN" | 4 x uint32 LE shape | float32 LE row-major data

Entries are keyed by ``(clip_id, sha256(prompt), reversed)``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import numpy as np

from ..core import RawAttention, TokenLayout, VideoClip
from ..errors import FixtureMissError, GradientUnsupportedError, ParseError
from .base import BackendSession, LatentPrompt, LossFn, check_latent, prompt_sha256

MAGIC = b"STVGATTN"
_HEADER = struct.Struct("<4I")
INDEX_NAME = "index.json"


def write_array(path: str | Path, array: np.ndarray) -> None:
    a = np.asarray(array)
    if a.ndim > 4:
        raise ValueError(f"at most 4 dimensions supported, got {a.ndim}")
    shape = (1,) * (4 - a.ndim) + a.shape
    data = np.ascontiguousarray(a, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(*shape))
        fh.write(data.tobytes(order="C"))


def read_array(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ParseError(path, "magic", f"expected {MAGIC!r}, found {raw[:8]!r}")
    if len(raw) < 8 + _HEADER.size:
        raise ParseError(path, "header", "truncated shape header")
    shape = _HEADER.unpack_from(raw, 8)
    body = raw[8 + _HEADER.size:]
    expected = int(np.prod(shape)) * 4
    if len(body) != expected:
        raise ParseError(path, "data", f"expected {expected} bytes for shape {shape}, found {len(body)}")
    arr = np.frombuffer(body, dtype="<f4").reshape(shape).copy()
    return arr


@dataclass(frozen=True, eq=False)
class FixtureEntry:
    clip_id: str
    prompt_text: Optional[str]
    layout: TokenLayout
    attention: np.ndarray
    answer_logits: Mapping[str, float]
    reversed: bool = False
    token_labels: tuple[str, ...] = ()
    embed_dim: int = 1
    prompt_sha: str = field(default="")

    def __post_init__(self) -> None:
        if not self.prompt_sha:
            if self.prompt_text is None:
                raise ValueError("need prompt_text or prompt_sha")
            object.__setattr__(self, "prompt_sha", prompt_sha256(self.prompt_text))

    @property
    def key(self) -> tuple[str, str, bool]:
        return (self.clip_id, self.prompt_sha, bool(self.reversed))


def _layout_json(layout: TokenLayout) -> dict[str, Any]:
    return {"n_sys": layout.n_sys, "m_visual": layout.m_visual, "n_query": layout.n_query,
            "n_role": layout.n_role, "grid": list(layout.grid)}


def write_fixture(directory: str | Path, entries: Iterable[FixtureEntry]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    for i, e in enumerate(entries):
        fname = f"attn_{i:05d}.bin"
        write_array(directory / fname, e.attention)
        index.append({
            "clip_id": e.clip_id,
            "prompt_sha256": e.prompt_sha,
            "prompt_text": e.prompt_text,
            "reversed": bool(e.reversed),
            "layout": _layout_json(e.layout),
            "attention": fname,
            "logits": {k: float(v) for k, v in e.answer_logits.items()},
            "token_labels": list(e.token_labels),
            "embed_dim": e.embed_dim,
        })
    (directory / INDEX_NAME).write_text(json.dumps({"version": 1, "entries": index}, indent=1, sort_keys=True))
    return directory


def read_fixture(directory: str | Path) -> list[FixtureEntry]:
    directory = Path(directory)
    index_path = directory / INDEX_NAME
    try:
        index = json.loads(index_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(index_path, "index", str(exc)) from exc
    out = []
    for i, rec in enumerate(index.get("entries", [])):
        where = f"entries[{i}]"
        try:
            lay = rec["layout"]
            layout = TokenLayout(lay["n_sys"], lay["m_visual"], lay["n_query"], lay["n_role"], tuple(lay["grid"]))
            attention = read_array(directory / rec["attention"])
            out.append(FixtureEntry(
                clip_id=rec["clip_id"],
                prompt_text=rec.get("prompt_text"),
                prompt_sha=rec["prompt_sha256"],
                layout=layout,
                attention=attention,
                answer_logits=dict(rec["logits"]),
                reversed=bool(rec.get("reversed", False)),
                token_labels=tuple(rec.get("token_labels", ())),
                embed_dim=int(rec.get("embed_dim", 1)),
            ))
        except KeyError as exc:
            raise ParseError(index_path, where, f"missing field {exc.args[0]!r}") from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(index_path, where, str(exc)) from exc
    return out


class ScriptedBackend:
    """Replays stored attention and logits; not differentiable."""

    differentiable = False

    def __init__(self, fixture_dir: str | Path) -> None:
        self.fixture_dir = Path(fixture_dir)
        self.name = f"scripted:{self.fixture_dir}"
        self._entries = {e.key: e for e in read_fixture(self.fixture_dir)}

    @classmethod
    def from_entries(cls, entries: Iterable[FixtureEntry], directory: str | Path) -> "ScriptedBackend":
        write_fixture(directory, entries)
        return cls(directory)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for path in sorted(self.fixture_dir.iterdir()):
            h.update(path.name.encode())
            h.update(path.read_bytes())
        return f"scripted:{h.hexdigest()[:16]}"

    def _entry(self, video: VideoClip, prompt_text: str, reverse: bool) -> FixtureEntry:
        key = (video.clip_id, prompt_sha256(prompt_text), bool(reverse))
        try:
            return self._entries[key]
        except KeyError:
            raise FixtureMissError(video.clip_id, key[1]) from None

    def latent_shape(self, video: VideoClip) -> tuple[int, int]:
        for (clip_id, _, _), e in self._entries.items():
            if clip_id == video.clip_id:
                return (e.layout.m_visual, e.embed_dim)
        raise FixtureMissError(video.clip_id, "")

    def run(self, video: VideoClip, prompt_text: str, latent: Optional[LatentPrompt] = None,
            *, reverse: bool = False) -> BackendSession:
        e = self._entry(video, prompt_text, reverse)
        check_latent(self, video, latent)
        if latent is not None and not latent.is_zero():
            raise ValueError("scripted backend cannot apply a non-zero latent prompt")
        if e.layout.grid[0] != video.frame_count:
            raise ValueError(f"fixture grid has {e.layout.grid[0]} frames, clip has {video.frame_count}")
        return BackendSession(e.layout, RawAttention(e.attention), dict(e.answer_logits), e.token_labels,
                              (e.layout.m_visual, e.embed_dim), {"reverse": reverse})

    def value_and_grad(self, video: VideoClip, prompt_text: str, latent: LatentPrompt, loss_fn: LossFn,
                       *, reverse: bool = False) -> tuple[float, np.ndarray]:
        raise GradientUnsupportedError(self.name)


def scripted_backend(fixture_path: str | Path) -> ScriptedBackend:
    return ScriptedBackend(fixture_path)
