"""Simulated attribute-blind detector and hybrid candidate selection."""

from .detector import (
    DetectionCandidate,
    DetectorConfig,
    detect_topk,
    hybrid_choice,
    hybrid_select,
    perturb_mask,
)

__all__ = [name for name in dir() if not name.startswith("_")]
