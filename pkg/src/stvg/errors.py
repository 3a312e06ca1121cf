"""Exception types raised across the package."""
from __future__ import annotations


class StvgError(Exception):
    """Base class for all errors raised by :mod:`stvg`."""


class BoxOutOfBoundsError(StvgError, ValueError):
    def __init__(self, detail: str = "") -> None:
        super().__init__("box out of bounds" + (f": {detail}" if detail else ""))


class LatentShapeError(StvgError, ValueError):
    def __init__(self, expected, got) -> None:
        super().__init__(f"latent shape error: expected {tuple(expected)}, got {tuple(got)}")


class ContextOverflowError(StvgError, ValueError):
    def __init__(self, needed: int, limit: int) -> None:
        super().__init__(f"context overflow: {needed} tokens > limit {limit}")


class VocabularyError(StvgError, KeyError):
    def __init__(self, token: str) -> None:
        super().__init__(f"vocabulary error: no logit for {token!r}")

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return self.args[0]


class GradientUnsupportedError(StvgError, TypeError):
    def __init__(self, backend_name: str = "") -> None:
        super().__init__("gradient unsupported" + (f" by {backend_name}" if backend_name else ""))


class FixtureMissError(StvgError, KeyError):
    def __init__(self, clip_id: str, prompt_sha: str) -> None:
        super().__init__(f"fixture miss: clip={clip_id!r} prompt_sha256={prompt_sha[:12]}...")

    def __str__(self) -> str:
        return self.args[0]


class NoProposalsError(StvgError, ValueError):
    def __init__(self) -> None:
        super().__init__("no proposals")


class InvalidKError(StvgError, ValueError):
    def __init__(self, k: int, n: int) -> None:
        super().__init__(f"invalid k: {k} not in [1, {n}]")


class EmptyIntersectionError(StvgError, ValueError):
    def __init__(self, span) -> None:
        super().__init__(f"empty intersection: proposal has no box in span {tuple(span)}")


class NoSamplesError(StvgError, ValueError):
    def __init__(self) -> None:
        super().__init__("no samples")


class InsufficientSamplesError(StvgError, ValueError):
    def __init__(self, n: int, needed: int) -> None:
        super().__init__(f"insufficient samples: {n} < {needed}")


class NumericalFailureError(StvgError, ArithmeticError):
    def __init__(self, step: int) -> None:
        super().__init__(f"numerical failure at step {step}")


class ParseError(StvgError, ValueError):
    """Schema violation in a manifest, proposal, results or fixture file."""

    def __init__(self, path, where: str, message: str) -> None:
        self.path = str(path)
        self.where = where
        super().__init__(f"{path}: {where}: {message}")
