"""Mask overlap metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_THRESHOLDS: tuple[int, ...] = (50, 60, 70, 80, 90)


class NoSamplesError(ValueError):
    code = "no-samples"


@dataclass(frozen=True)
class MetricsConfig:
    thresholds: tuple[int, ...] = DEFAULT_THRESHOLDS
    # IoU assigned when prediction and ground truth are both empty
    both_empty_iou: float = 1.0
    correct_iou: float = 0.5  # SA "correctly segmented" proxy

    def __post_init__(self):
        t = self.thresholds
        if not t or any(not 0 < x < 100 for x in t) or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("thresholds must be strictly increasing inside (0, 100)")


def iou(pred: np.ndarray, gt: np.ndarray, both_empty: float = 1.0) -> float:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return float(both_empty)
    return np.count_nonzero(pred & gt) / union


def precision_at(ious, threshold: float) -> float:
    """Percentage of IoUs strictly above ``threshold`` percent."""
    values = np.asarray(list(ious), dtype=float)
    if values.size == 0:
        raise NoSamplesError("precision_at needs at least one IoU")
    if not 0 < threshold < 100:
        raise ValueError("threshold must be inside (0, 100)")
    return 100.0 * np.count_nonzero(values > threshold / 100.0) / values.size
