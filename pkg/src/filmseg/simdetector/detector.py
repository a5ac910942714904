"""Attribute-blind stand-in for an open-set detector, and overlap-based hybrid selection.

The detector only reads the head noun of a query. Every instance of that category
is a candidate, ranked by its (noisy) area, so attributes such as colour or
position never influence which instance comes first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..evalkit.extract import head_noun
from ..evalkit.metrics import iou
from ..scenegen.catalog import DEFAULT_CATALOG
from ..scenegen.scene import Scene
from ..scenegen.storage import rle_decode, rle_encode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectorConfig:
    top_k: int = 3
    # boundary radius is drawn uniformly from -max..max; negative erodes, positive dilates
    boundary_radius_max: int = 2
    score_noise: float = 0.05
    category_recall: float = 0.9
    iou_floor: float = 0.7

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.boundary_radius_max < 0 or self.score_noise < 0:
            raise ValueError("noise parameters must be >= 0")
        if not 0 <= self.category_recall <= 1:
            raise ValueError("category_recall must be a probability")
        if not 0 <= self.iou_floor <= 1:
            raise ValueError("iou_floor must be in [0, 1]")


@dataclass
class DetectionCandidate:
    mask: np.ndarray  # bool H x W
    score: float
    source_id: int  # diagnostics only; selection never reads it

    def to_dict(self) -> dict:
        return {"score": self.score, "source_id": self.source_id, "mask_rle": rle_encode(self.mask.astype(np.int16))}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionCandidate":
        return cls(rle_decode(d["mask_rle"]).astype(bool), d["score"], d["source_id"])


def _morph(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return mask.copy()
    op = ndimage.binary_dilation if radius > 0 else ndimage.binary_erosion
    return op(mask, iterations=abs(radius), border_value=0)


def perturb_mask(mask: np.ndarray, boundary_radius_max: int, rng: np.random.Generator,
                 iou_floor: float = 0.7, radius: int | None = None) -> np.ndarray:
    """Dilate or erode by a random radius; shrinks the radius until IoU with the input stays >= floor."""
    mask = np.asarray(mask, dtype=bool)
    r = int(rng.integers(-boundary_radius_max, boundary_radius_max + 1)) if radius is None else radius
    while True:
        out = _morph(mask, r)
        if r == 0 or iou(out, mask) >= iou_floor:
            return out
        r -= 1 if r > 0 else -1


def _instances(scene: Scene, category: str | None):
    if category is None:
        return []
    return [o for o in scene.objects if o.category.name == category]


def detect_topk(scene: Scene, query_text: str, config: DetectorConfig, rng: np.random.Generator,
                catalog=DEFAULT_CATALOG) -> list[DetectionCandidate]:
    noun = head_noun(query_text, catalog)
    present = sorted({o.category.name for o in scene.objects})
    if noun is not None and rng.random() >= config.category_recall:
        others = [c for c in present if c != noun]
        if others:
            noun = others[int(rng.integers(len(others)))]
    pool = _instances(scene, noun)
    if not pool:
        # unknown noun or absent category: fall back to the largest objects overall
        pool = list(scene.objects)
    areas = np.array([o.gt_mask.sum() for o in pool], dtype=float)
    base = areas / areas.max()
    noisy = np.clip(base + rng.normal(0.0, config.score_noise, len(pool)), 0.0, 1.0)
    order = sorted(range(len(pool)), key=lambda i: (-noisy[i], pool[i].id))[: config.top_k]
    return [
        DetectionCandidate(
            perturb_mask(pool[i].gt_mask, config.boundary_radius_max, rng, config.iou_floor),
            float(noisy[i]),
            pool[i].id,
        )
        for i in order
    ]


def _as_binary(mask) -> np.ndarray:
    return np.asarray(getattr(mask, "binary_mask", mask), dtype=bool)


def hybrid_choice(hifics_mask, candidates) -> int:
    """Index of the chosen candidate, or -1 when falling back to the decoder mask."""
    if not candidates:
        log.warning("hybrid_select: no detector candidates, keeping the decoder mask")
        return -1
    pred = _as_binary(hifics_mask)
    overlaps = [iou(c.mask, pred, both_empty=0.0) for c in candidates]
    if max(overlaps) == 0.0:
        log.warning("hybrid_select: no candidate overlaps the decoder mask, keeping it")
        return -1
    return min(range(len(candidates)), key=lambda i: (-overlaps[i], -candidates[i].score, i))


def hybrid_select(hifics_mask, candidates) -> np.ndarray:
    """Candidate mask with maximum IoU against the decoder's binary mask.

    Ties go to the higher detector score, then the lower list index.
    """
    i = hybrid_choice(hifics_mask, candidates)
    return _as_binary(hifics_mask).copy() if i < 0 else candidates[i].mask
