"""A tiny deterministic transformer standing in for a multimodal LLM.

Frames are synthesized from ``(seed, clip_id, source frame index)``, cut
into an ``h x w`` patch grid and embedded from mean patch colors.  The
token sequence is system, visual, query, special tokens; attention is
causal; the answer head reads the last special token.  Everything runs in
float64 so finite-difference checks against the latent gradient are tight.
"""
from __future__ import annotations

import hashlib
import re
import threading
import zlib
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch

from ..core import RawAttention, TokenLayout, VideoClip
from ..errors import ContextOverflowError
from .base import BackendSession, LatentPrompt, LossFn, check_latent

_WORD = re.compile(r"\w+|[^\w\s]")


@dataclass(frozen=True)
class ToyDims:
    embed: int = 16
    layers: int = 2
    heads: int = 2
    n_sys: int = 3
    n_role: int = 4
    grid_h: int = 3
    grid_w: int = 3
    patch: int = 4
    text_buckets: int = 64
    max_frames: int = 64
    max_context: int = 1024
    answer_vocab: tuple[str, ...] = ("yes", "no", "maybe", "there", "a", "the", "man", "woman")
    # std of query/key projections; larger values give peakier attention
    qk_scale: float = 1.5

    def __post_init__(self) -> None:
        if self.embed % self.heads:
            raise ValueError("embed must be divisible by heads")
        vocab = [v.lower() for v in self.answer_vocab]
        if "yes" not in vocab or "no" not in vocab or len(vocab) < 8:
            raise ValueError("answer vocabulary needs >= 8 entries including 'yes' and 'no'")


def tokenize(text: str) -> list[str]:
    return _WORD.findall(text.lower())


class ToyBackend:
    """Seeded mini-transformer implementing the backend protocol."""

    differentiable = True

    def __init__(self, seed: int = 0, dims: Optional[ToyDims] = None,
                 plant: Optional[np.ndarray] = None) -> None:
        self.seed = int(seed)
        self.dims = dims or ToyDims()
        self.name = f"toy:{self.seed}"
        self._lock = threading.Lock()
        self._params = self._init_params()
        for p in self._params.values():
            p.requires_grad_(False)
        self._plant = None if plant is None else torch.as_tensor(np.asarray(plant, dtype=np.float64))

    # -- parameters -----------------------------------------------------
    def _init_params(self) -> dict[str, torch.Tensor]:
        d = self.dims
        g = torch.Generator().manual_seed(self.seed)

        def normal(*shape: int, std: float) -> torch.Tensor:
            return torch.randn(*shape, generator=g, dtype=torch.float64) * std

        e = d.embed
        p: dict[str, torch.Tensor] = {
            "sys": normal(d.n_sys, e, std=1.0),
            "role": normal(d.n_role, e, std=1.0),
            "text": normal(d.text_buckets, e, std=1.0),
            "color_w": normal(3, e, std=2.0),
            "color_b": normal(e, std=0.5),
            "cell_pos": normal(d.grid_h * d.grid_w, e, std=0.5),
            "frame_pos": normal(d.max_frames, e, std=0.3),
            "pos": normal(d.max_context, e, std=0.1),
        }
        for layer in range(d.layers):
            p[f"l{layer}.ln1_g"] = torch.ones(e, dtype=torch.float64)
            p[f"l{layer}.ln1_b"] = torch.zeros(e, dtype=torch.float64)
            p[f"l{layer}.wq"] = normal(e, e, std=d.qk_scale / e ** 0.5)
            p[f"l{layer}.wk"] = normal(e, e, std=d.qk_scale / e ** 0.5)
            p[f"l{layer}.wv"] = normal(e, e, std=1.0 / e ** 0.5)
            p[f"l{layer}.wo"] = normal(e, e, std=1.0 / e ** 0.5)
            p[f"l{layer}.ln2_g"] = torch.ones(e, dtype=torch.float64)
            p[f"l{layer}.ln2_b"] = torch.zeros(e, dtype=torch.float64)
            p[f"l{layer}.w1"] = normal(e, 4 * e, std=1.0 / e ** 0.5)
            p[f"l{layer}.w2"] = normal(4 * e, e, std=1.0 / (4 * e) ** 0.5)
        p["lnf_g"] = torch.ones(e, dtype=torch.float64)
        p["lnf_b"] = torch.zeros(e, dtype=torch.float64)
        p["head"] = normal(e, len(d.answer_vocab), std=1.0 / e ** 0.5)
        return p

    def parameters(self) -> dict[str, np.ndarray]:
        return {k: v.detach().numpy().copy() for k, v in self._params.items()}

    def parameter_checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self._params):
            h.update(k.encode())
            h.update(self._params[k].detach().numpy().tobytes())
        return h.hexdigest()

    def fingerprint(self) -> str:
        h = hashlib.sha256(repr(sorted(asdict(self.dims).items())).encode())
        h.update(str(self.seed).encode())
        if self._plant is not None:
            h.update(self._plant.numpy().tobytes())
        return f"toy:{self.seed}:{h.hexdigest()[:16]}"

    # -- inputs ---------------------------------------------------------
    def layout(self, video: VideoClip, prompt_text: str) -> TokenLayout:
        d = self.dims
        m = video.frame_count * d.grid_h * d.grid_w
        layout = TokenLayout(d.n_sys, m, len(tokenize(prompt_text)), d.n_role,
                             (video.frame_count, d.grid_h, d.grid_w))
        if layout.total > d.max_context:
            raise ContextOverflowError(layout.total, d.max_context)
        if video.frame_count > d.max_frames:
            raise ContextOverflowError(video.frame_count, d.max_frames)
        return layout

    def latent_shape(self, video: VideoClip) -> tuple[int, int]:
        return (video.frame_count * self.dims.grid_h * self.dims.grid_w, self.dims.embed)

    def patch_colors(self, video: VideoClip) -> np.ndarray:
        """Mean patch colors ``(frames, h, w, 3)`` of the synthesized frames."""
        d = self.dims
        clip_key = zlib.crc32(video.clip_id.encode("utf-8"))
        base = np.random.default_rng([self.seed, clip_key]).random((d.grid_h * d.patch, d.grid_w * d.patch, 3))
        frames = []
        for src in video.frame_indices:
            noise = np.random.default_rng([self.seed, clip_key, src]).random(base.shape)
            img = 0.7 * base + 0.3 * noise
            frames.append(img.reshape(d.grid_h, d.patch, d.grid_w, d.patch, 3).mean(axis=(1, 3)))
        return np.stack(frames)

    def _visual_tokens(self, video: VideoClip, reverse: bool) -> torch.Tensor:
        d, p = self.dims, self._params
        colors = self.patch_colors(video)
        if reverse:
            colors = colors[::-1]
        colors_t = torch.as_tensor(np.ascontiguousarray(colors).reshape(video.frame_count, -1, 3))
        tok = colors_t @ p["color_w"] + p["color_b"] + p["cell_pos"][None]
        tok = tok + p["frame_pos"][: video.frame_count, None, :]
        tok = tok.reshape(-1, d.embed)
        if self._plant is not None:
            plant = self._plant.flip(0) if reverse else self._plant
            tok = tok + plant.reshape(-1, d.embed)
        return tok

    def _text_tokens(self, prompt_text: str) -> torch.Tensor:
        ids = [zlib.crc32(w.encode("utf-8")) % self.dims.text_buckets for w in tokenize(prompt_text)]
        return self._params["text"][torch.tensor(ids, dtype=torch.long)]

    # -- forward --------------------------------------------------------
    @staticmethod
    def _ln(x: torch.Tensor, g: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        mu = x.mean(-1, keepdim=True)
        var = ((x - mu) ** 2).mean(-1, keepdim=True)
        return (x - mu) / torch.sqrt(var + 1e-5) * g + b

    def _forward(self, video: VideoClip, prompt_text: str, latent: Optional[torch.Tensor],
                 reverse: bool) -> tuple[TokenLayout, torch.Tensor, torch.Tensor]:
        d, p = self.dims, self._params
        layout = self.layout(video, prompt_text)
        vis = self._visual_tokens(video, reverse)
        if latent is not None:
            vis = vis + latent
        x = torch.cat([p["sys"], vis, self._text_tokens(prompt_text), p["role"]], dim=0)
        n = x.shape[0]
        x = x + p["pos"][:n]
        causal = torch.ones(n, n, dtype=torch.bool).tril()
        hd = d.embed // d.heads
        attns = []
        for layer in range(d.layers):
            pre = f"l{layer}."
            h = self._ln(x, p[pre + "ln1_g"], p[pre + "ln1_b"])
            q = (h @ p[pre + "wq"]).view(n, d.heads, hd).transpose(0, 1)
            k = (h @ p[pre + "wk"]).view(n, d.heads, hd).transpose(0, 1)
            v = (h @ p[pre + "wv"]).view(n, d.heads, hd).transpose(0, 1)
            scores = (q @ k.transpose(1, 2)) / hd ** 0.5
            scores = scores.masked_fill(~causal, float("-inf"))
            a = torch.softmax(scores, dim=-1)
            attns.append(a)
            ctx = (a @ v).transpose(0, 1).reshape(n, d.embed)
            x = x + ctx @ p[pre + "wo"]
            h = self._ln(x, p[pre + "ln2_g"], p[pre + "ln2_b"])
            x = x + torch.nn.functional.gelu(h @ p[pre + "w1"]) @ p[pre + "w2"]
        h_last = self._ln(x[-1], p["lnf_g"], p["lnf_b"])
        logprobs = torch.log_softmax(h_last @ p["head"], dim=-1)
        return layout, torch.stack(attns), logprobs

    def _session(self, layout: TokenLayout, attn, logprobs, video: VideoClip, reverse: bool) -> BackendSession:
        labels = tuple(f"<role{i}>" for i in range(layout.n_role))
        if isinstance(attn, torch.Tensor) and not attn.requires_grad:
            attn = RawAttention(attn.numpy())
            logits = {tok: float(logprobs[i]) for i, tok in enumerate(self.dims.answer_vocab)}
        else:
            logits = {tok: logprobs[i] for i, tok in enumerate(self.dims.answer_vocab)}
        return BackendSession(layout, attn, logits, labels, self.latent_shape(video), {"reverse": reverse})

    def run(self, video: VideoClip, prompt_text: str, latent: Optional[LatentPrompt] = None,
            *, reverse: bool = False) -> BackendSession:
        check_latent(self, video, latent)
        lat = None if latent is None or latent.is_zero() else torch.tensor(latent.values)
        with torch.no_grad():
            layout, attn, logprobs = self._forward(video, prompt_text, lat, reverse)
        return self._session(layout, attn, logprobs, video, reverse)

    def value_and_grad(self, video: VideoClip, prompt_text: str, latent: LatentPrompt, loss_fn: LossFn,
                       *, reverse: bool = False) -> tuple[float, np.ndarray]:
        check_latent(self, video, latent)
        with self._lock:
            lat = torch.tensor(latent.values, dtype=torch.float64, requires_grad=True)
            layout, attn, logprobs = self._forward(video, prompt_text, lat, reverse)
            session = self._session(layout, attn, logprobs, video, reverse)
            loss = loss_fn(session)
            if not isinstance(loss, torch.Tensor) or not loss.requires_grad:
                return float(loss), np.zeros(latent.shape)
            loss.backward()
            return float(loss.detach()), lat.grad.numpy().copy()


def toy_backend(seed: int = 0, dims: Optional[ToyDims] = None, **kwargs) -> ToyBackend:
    return ToyBackend(seed, dims, **kwargs)
