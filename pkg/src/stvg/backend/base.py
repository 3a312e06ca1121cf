"""Contract every attention-exposing multimodal backend implements."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Protocol, runtime_checkable

import numpy as np

from ..core import RawAttention, TokenLayout, VideoClip
from ..errors import GradientUnsupportedError, LatentShapeError, VocabularyError


@dataclass(frozen=True, eq=False)
class LatentPrompt:
    """Additive prompt on the visual-token embeddings, shape ``(m_visual, embed_dim)``.

    ``losses``/``gaps`` hold the per-step optimization trace (empty when
    the prompt was not optimized); ``numerical_failure`` is set when
    optimization stopped early on a non-finite loss or gradient.
    """

    values: np.ndarray
    losses: tuple[float, ...] = ()
    gaps: tuple[float, ...] = ()
    numerical_failure: bool = False

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"latent prompt must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("latent prompt must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "LatentPrompt":
        return cls(np.zeros(shape))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def content_hash(self) -> str:
        if self.is_zero():
            return "zero"
        return hashlib.sha256(self.values.tobytes()).hexdigest()


@dataclass(frozen=True, eq=False)
class BackendSession:
    """Outputs of one forward pass.

    ``answer_logits`` maps vocabulary surface forms to log-probabilities at
    the first generated answer position.  Inside a gradient computation the
    same fields carry differentiable tensors instead of numpy values.
    """

    layout: TokenLayout
    raw_attention: Any
    answer_logits: Mapping[str, Any]
    token_labels: tuple[str, ...] = ()
    latent_shape: tuple[int, int] = (0, 0)
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = self.raw_attention.values.shape[2] if isinstance(self.raw_attention, RawAttention) \
            else self.raw_attention.shape[2]
        if n != self.layout.total:
            raise ValueError(f"layout covers {self.layout.total} tokens but attention has {n}")
        if not self.token_labels:
            labels = tuple(f"role{i}" for i in range(self.layout.n_role))
            object.__setattr__(self, "token_labels", labels)
        if len(self.token_labels) != self.layout.n_role:
            raise ValueError("one token label per special token required")

    @property
    def attention(self) -> np.ndarray:
        return self.raw_attention.values if isinstance(self.raw_attention, RawAttention) \
            else self.raw_attention


LossFn = Callable[[BackendSession], Any]


@runtime_checkable
class Backend(Protocol):
    """Minimal surface the pipeline needs from a multimodal model.

    Adapters for real models implement this protocol: expose the token
    layout, post-softmax attention of every layer/head, and the answer
    log-probabilities; differentiable adapters also implement
    :meth:`value_and_grad` with respect to an additive visual latent.
    """

    name: str
    differentiable: bool

    def fingerprint(self) -> str: ...

    def latent_shape(self, video: VideoClip) -> tuple[int, int]: ...

    def run(
        self, video: VideoClip, prompt_text: str, latent: Optional[LatentPrompt] = None, *, reverse: bool = False
    ) -> BackendSession: ...

    def value_and_grad(
        self, video: VideoClip, prompt_text: str, latent: LatentPrompt, loss_fn: LossFn, *, reverse: bool = False
    ) -> tuple[float, np.ndarray]: ...


def check_latent(backend: Backend, video: VideoClip, latent: Optional[LatentPrompt]) -> None:
    if latent is None:
        return
    expected = backend.latent_shape(video)
    if tuple(latent.shape) != tuple(expected):
        raise LatentShapeError(expected, latent.shape)


def lookup_logit(session: BackendSession, token: str) -> Any:
    """Case- and whitespace-insensitive logit lookup; exact surface form wins."""
    logits = session.answer_logits
    if token in logits:
        return logits[token]
    want = token.strip().lower()
    for key, value in logits.items():
        if key.strip().lower() == want:
            return value
    raise VocabularyError(token)


def logit_gap(session: BackendSession) -> Any:
    """``logit("yes") - logit("no")`` at the first answer position."""
    return lookup_logit(session, "yes") - lookup_logit(session, "no")


def exp(x: Any) -> Any:
    # tensors inside a gradient trace carry their own exp
    return x.exp() if hasattr(x, "exp") else math.exp(x)


def gradient_wrt_latent(
    backend: Backend,
    video: VideoClip,
    prompt_text: str,
    latent: LatentPrompt,
    loss_fn: LossFn,
    *,
    reverse: bool = False,
) -> np.ndarray:
    """d loss_fn(session) / d latent.  Model parameters stay untouched."""
    if not getattr(backend, "differentiable", False):
        raise GradientUnsupportedError(getattr(backend, "name", type(backend).__name__))
    check_latent(backend, video, latent)
    _, grad = backend.value_and_grad(video, prompt_text, latent, loss_fn, reverse=reverse)
    return grad


def prompt_sha256(prompt_text: str) -> str:
    return hashlib.sha256(prompt_text.encode("utf-8")).hexdigest()
