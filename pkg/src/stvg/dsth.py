"""Decomposed spatio-temporal highlighting.

The query is split into an attribute description (what the target looks
like) and an action description (what it does).  Each becomes an
existence question, and a latent visual prompt is tuned at test time so
the model answers "yes" more confidently than "no"; the attention of the
grounding token under the tuned prompt drives spatial or temporal
prediction.
"""
from __future__ import annotations

import json
import logging
import re
import subprocess
import urllib.request
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional, Protocol

import numpy as np

from .backend.base import Backend, BackendSession, LatentPrompt, exp, logit_gap
from .core import GroundingAttentionMap, LRAConfig, QueryRecord, VideoClip
from .errors import GradientUnsupportedError
from .gti import aggregate_attention, select_grounding_token

log = logging.getLogger(__name__)

__all__ = [
    "LRAConfig",
    "SubQueryPair",
    "InterrogativePrompt",
    "decompose_query",
    "fallback_decompose",
    "make_interrogative",
    "lra_loss",
    "optimize_prompt",
    "highlighted_attention",
]

TEMPLATE_ID = "stvg-decompose-v1"
INSTRUCTION_TEMPLATES = {
    TEMPLATE_ID: (
        "Split the video query into two descriptions of the same target. "
        "'attribute': the target with its appearance and location, no action. "
        "'action': the target with what it does over time. "
        "Answer with a JSON object {\"attribute\": ..., \"action\": ...}."
    ),
}


class Provenance(str, Enum):
    LLM_CLIENT = "llm_client"
    FALLBACK = "fallback"
    FIXTURE = "fixture"


@dataclass(frozen=True)
class SubQueryPair:
    attribute_text: str
    action_text: str
    provenance: Provenance = Provenance.FALLBACK

    def __post_init__(self) -> None:
        if not self.attribute_text.strip() or not self.action_text.strip():
            raise ValueError("sub-queries must be non-empty")
        object.__setattr__(self, "provenance", Provenance(self.provenance))


@dataclass(frozen=True)
class InterrogativePrompt:
    text: str
    kind: str  # "spatial" | "temporal"

    def __post_init__(self) -> None:
        if not self.text.endswith("?"):
            raise ValueError("interrogative prompt must end with '?'")
        if self.kind not in ("spatial", "temporal"):
            raise ValueError(f"unknown prompt kind {self.kind!r}")


# --- decomposition clients ------------------------------------------------

class DecompositionClient(Protocol):
    provenance: Provenance

    def request(self, payload: Mapping[str, Any]) -> Mapping[str, Any]: ...


class FixtureClient:
    """Serves decompositions from a JSON file mapping query_id -> {attribute, action}."""

    provenance = Provenance.FIXTURE

    def __init__(self, mapping: Mapping[str, Mapping[str, str]] | str | Path) -> None:
        if isinstance(mapping, (str, Path)):
            mapping = json.loads(Path(mapping).read_text())
        self.mapping = dict(mapping)

    def request(self, payload: Mapping[str, Any]) -> Mapping[str, Any]:
        return self.mapping[payload["query_id"]]


class SubprocessClient:
    """Line-delimited JSON over a long-lived child process's stdin/stdout."""

    provenance = Provenance.LLM_CLIENT

    def __init__(self, command: list[str], timeout: float = 60.0) -> None:
        self.command = command
        self.timeout = timeout
        self._proc: Optional[subprocess.Popen] = None

    def request(self, payload: Mapping[str, Any]) -> Mapping[str, Any]:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
        assert self._proc.stdin is not None and self._proc.stdout is not None
        self._proc.stdin.write(json.dumps(payload) + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise ConnectionError("decomposition process closed its output")
        return json.loads(line)

    def close(self) -> None:
        if self._proc is not None:
            self._proc.terminate()
            self._proc = None


class HttpClient:
    """POSTs the request JSON to ``url`` and parses the JSON reply."""

    provenance = Provenance.LLM_CLIENT

    def __init__(self, url: str, timeout: float = 60.0) -> None:
        self.url = url
        self.timeout = timeout

    def request(self, payload: Mapping[str, Any]) -> Mapping[str, Any]:
        req = urllib.request.Request(self.url, data=json.dumps(payload).encode("utf-8"),
                                     headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))


# --- rule-based fallback --------------------------------------------------

_VERBS = """
walk turn stand sit look hold take put run go talk speak leave come open close raise pick push
pull hug touch point move bend nod shake throw catch drink eat enter exit follow carry reach get
give watch smile laugh dance jump climb lean lift lower kneel lie pat step stop wave grab kick
ride drive chase hit play write read answer ask say tell pour stretch wipe adjust approach glance
squat rise face fall cry shout stare pass hand fix place keep start begin continue return show
walk stroll rush hurry wander head back appear disappear bow clap kiss cross sing wear use
""".split()
_IRREGULAR = {
    "stood", "sat", "took", "went", "ran", "held", "got", "put", "gave", "came", "left", "spoke",
    "said", "told", "rose", "fell", "threw", "caught", "drank", "ate", "lay", "saw", "began", "kept",
    "shook", "wore", "rode", "drove", "bent", "hit", "knelt", "led", "brought",
}
_AUX = {"is", "are", "was", "were", "has", "have", "had", "does", "did", "can", "could", "will",
        "would", "may", "might", "should", "must"}
_ADJ_PARTICIPLES = {"dressed", "clothed", "seated", "named", "called", "covered", "tied", "painted",
                    "striped", "colored", "coloured", "haired", "bearded", "masked", "tattooed"}
_DETERMINERS = {"a", "an", "the", "his", "her", "their", "its", "my", "your", "our", "this", "these",
                "those", "some", "each", "every", "another", "one", "two", "three", "other", "to"}
_PREPOSITIONS = {"on", "in", "at", "of", "with", "by", "near", "behind", "beside", "next", "from",
                 "under", "over", "between", "among", "around", "wearing", "holding", "carrying"}
_PLURAL_SUBJECTS = {"people", "men", "women", "children", "they", "persons", "both", "kids"}
_RELATIVE = {"who", "which", "whose", "that"}


def _finite_forms() -> set[str]:
    forms = set(_IRREGULAR) | _AUX
    for v in _VERBS:
        forms.add(v + "s")
        forms.add(v + "es")
        if v.endswith("y"):
            forms.add(v[:-1] + "ies")
            forms.add(v[:-1] + "ied")
        forms.add(v + "ed")
        forms.add(v + "d" if v.endswith("e") else v + "ed")
        if re.fullmatch(r"[a-z]*[^aeiou][aeiou][bdgmnpt]", v):
            forms.add(v + v[-1] + "ed")
    forms.discard("ss")
    return forms - _ADJ_PARTICIPLES


_FINITE = _finite_forms()
_BASE = set(_VERBS)


def _norm(word: str) -> str:
    return re.sub(r"[^\w']", "", word.lower())


def _is_finite_verb(word: str, prev: Optional[str]) -> bool:
    if prev in _DETERMINERS:
        return False
    if word in _FINITE:
        return True
    return word in _BASE and prev is not None and (prev in _PLURAL_SUBJECTS or
                                                   (prev.endswith("s") and prev not in _FINITE))


def _strip_tail(words: list[str]) -> str:
    text = " ".join(words).strip().rstrip(",;:.!? ")
    while True:
        low = text.lower()
        trimmed = next((low[: -len(w)].rstrip(",; ") for w in (" and", " then", " who", " that")
                        if low.endswith(w)), None)
        if trimmed is None:
            return text
        text = text[: len(trimmed)]


def fallback_decompose(text: str) -> SubQueryPair:
    """Split at the first finite verb outside a relative clause.

    The attribute part is everything before that verb; the action part is
    the subject noun phrase followed by the verb and the rest.
    """
    words = text.strip().split()
    normed = [_norm(w) for w in words]
    verb_at = None
    in_relative = False
    for i, w in enumerate(normed):
        prev = normed[i - 1] if i else None
        if w in _RELATIVE and i > 0 and (w != "that" or (i + 1 < len(normed) and normed[i + 1] in _FINITE)):
            in_relative = True
            continue
        if i > 0 and _is_finite_verb(w, prev):
            if in_relative:
                in_relative = False
                continue
            verb_at = i
            break
    whole = _strip_tail(words) or text.strip()
    if verb_at is None:
        return SubQueryPair(whole, whole, Provenance.FALLBACK)
    attribute = _strip_tail(words[:verb_at])
    subj_end = verb_at
    for i, w in enumerate(normed[:verb_at]):
        if i > 0 and (w in _PREPOSITIONS or w in _RELATIVE or w in _ADJ_PARTICIPLES or words[i - 1].endswith(",")):
            subj_end = i
            break
    subject = _strip_tail(words[:subj_end])
    action = _strip_tail(words[:subj_end] + words[verb_at:]) if subject else ""
    if not attribute or not action:
        return SubQueryPair(whole, whole, Provenance.FALLBACK)
    return SubQueryPair(attribute, action, Provenance.FALLBACK)


def decompose_query(q: QueryRecord, client: Optional[DecompositionClient] = None) -> SubQueryPair:
    """Ask the client for an attribute/action split; fall back to rules on any failure."""
    if client is not None:
        payload = {"query_id": q.query_id, "text": q.text, "instruction_template_id": TEMPLATE_ID}
        try:
            resp = client.request(payload)
            attribute, action = resp["attribute"], resp["action"]
            if not (isinstance(attribute, str) and isinstance(action, str)):
                raise TypeError("attribute/action must be strings")
            return SubQueryPair(attribute.strip(), action.strip(), client.provenance)
        except Exception as exc:  # noqa: BLE001 - any client failure degrades to the fallback
            log.warning("decomposition client failed for %s (%s); using fallback", q.query_id, exc)
    return fallback_decompose(q.text)


_ARTICLE = re.compile(r"^(a|an|the)\b", re.IGNORECASE)


def make_interrogative(description: str, kind: str = "spatial") -> InterrogativePrompt:
    """``"Is there <description> in this video?"`` with the leading article lowercased."""
    desc = description.strip().rstrip(".!?;:, ").strip()
    if not desc:
        raise ValueError("empty description")
    desc = _ARTICLE.sub(lambda m: m.group(0).lower(), desc)
    return InterrogativePrompt(f"Is there {desc} in this video?", kind)


# --- logit-guided re-attention ---------------------------------------------

def lra_loss(session: BackendSession) -> Any:
    """``1 - exp(logit_yes - logit_no)``; works on floats and on traced tensors."""
    return 1.0 - exp(logit_gap(session))


def _prompt_text(prompt: InterrogativePrompt | str) -> str:
    return prompt.text if isinstance(prompt, InterrogativePrompt) else prompt


def optimize_prompt(backend: Backend, video: VideoClip, prompt: InterrogativePrompt | str,
                    cfg: LRAConfig = LRAConfig(), *, reverse: bool = False) -> LatentPrompt:
    """Plain gradient descent on the latent prompt for ``cfg.n_ep`` steps.

    The returned prompt records the loss and logit gap before every step
    plus once more at the final latent.  A non-finite loss or gradient stops
    the loop and returns the last finite latent with ``numerical_failure``.
    """
    if not getattr(backend, "differentiable", False):
        raise GradientUnsupportedError(getattr(backend, "name", ""))
    text = _prompt_text(prompt)
    latent = np.zeros(backend.latent_shape(video))
    losses: list[float] = []
    gaps: list[float] = []

    def loss_fn(session: BackendSession):
        gap = logit_gap(session)
        gaps.append(float(gap.detach()) if hasattr(gap, "detach") else float(gap))
        return lra_loss(session)

    for step in range(cfg.n_ep):
        loss, grad = backend.value_and_grad(video, text, LatentPrompt(latent), loss_fn, reverse=reverse)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            log.warning("LRA numerical failure at step %d on %s", step, video.clip_id)
            gaps.pop()
            return LatentPrompt(latent, tuple(losses), tuple(gaps), numerical_failure=True)
        losses.append(float(loss))
        candidate = latent - cfg.step_size * grad
        if not np.all(np.isfinite(candidate)):
            log.warning("LRA numerical failure at step %d on %s", step, video.clip_id)
            return LatentPrompt(latent, tuple(losses), tuple(gaps), numerical_failure=True)
        latent = candidate
    final = backend.run(video, text, LatentPrompt(latent), reverse=reverse)
    gap = float(logit_gap(final))
    losses.append(float(lra_loss(final)))
    gaps.append(gap)
    failed = not np.isfinite(losses[-1])
    return LatentPrompt(latent, tuple(losses), tuple(gaps), numerical_failure=failed)


def highlighted_attention(backend: Backend, video: VideoClip, prompt: InterrogativePrompt | str,
                          latent: Optional[LatentPrompt] = None, *, reverse: bool = False,
                          select_token: bool = True) -> GroundingAttentionMap:
    """Grounding-token map under ``latent``.

    With ``select_token=False`` the last special token is used instead of
    the most activated one.  For ``reverse=True`` the map is in reversed
    frame order, as the backend saw it.
    """
    session = backend.run(video, _prompt_text(prompt), latent, reverse=reverse)
    sta = aggregate_attention(session.raw_attention, session.layout, session.token_labels)
    if select_token:
        _, amap = select_grounding_token(sta)
    else:
        amap = sta.maps[-1]
    return amap
