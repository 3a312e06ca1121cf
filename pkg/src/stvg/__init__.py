"""Zero-shot spatio-temporal video grounding from grounding-token attention."""
from __future__ import annotations

from .core import BoundingBox, GroundingAttentionMap, PipelineConfig, TrackProposal, Tube, VideoClip

__version__ = "0.1.0"

__all__ = ["BoundingBox", "GroundingAttentionMap", "PipelineConfig", "TrackProposal", "Tube", "VideoClip",
           "__version__"]
