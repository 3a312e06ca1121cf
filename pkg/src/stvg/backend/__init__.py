"""Backends exposing multimodal-model attention and answer logits."""
from .base import (
    Backend,
    BackendSession,
    LatentPrompt,
    gradient_wrt_latent,
    logit_gap,
    lookup_logit,
    prompt_sha256,
)
from .cache import CachingBackend, default_cache_dir
from .scripted import FixtureEntry, ScriptedBackend, read_array, read_fixture, scripted_backend, write_array, write_fixture
from .toy import ToyBackend, ToyDims, toy_backend

__all__ = [
    "Backend",
    "BackendSession",
    "CachingBackend",
    "FixtureEntry",
    "LatentPrompt",
    "ScriptedBackend",
    "ToyBackend",
    "ToyDims",
    "default_cache_dir",
    "gradient_wrt_latent",
    "logit_gap",
    "lookup_logit",
    "prompt_sha256",
    "read_array",
    "read_fixture",
    "scripted_backend",
    "toy_backend",
    "write_array",
    "write_fixture",
]
