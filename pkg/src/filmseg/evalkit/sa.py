"""Segmentation Accuracy (SA) scored against minimal referring queries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..scenegen.attributes import FIELD_PRIORITY, MAX_ATTRIBUTES, AttributeSet, compute_mrq, position_descriptors
from ..scenegen.grammar import realize
from ..scenegen.scene import Scene
from .metrics import iou

PENALTY = 25


class ProtocolViolationError(ValueError):
    code = "protocol-violation"


@dataclass
class SATrial:
    mrq: AttributeSet
    attempts: list[tuple[AttributeSet, bool]] = field(default_factory=list)
    scene_id: str = ""
    target_id: int = -1


def trial_sa(trial: SATrial) -> int:
    if not trial.attempts or trial.attempts[0][0] != trial.mrq:
        raise ProtocolViolationError("the first attempt must be the minimal referring query")
    for attrs, correct in trial.attempts:
        if attrs.attribute_count > MAX_ATTRIBUTES:
            raise ProtocolViolationError("attempts are capped at four attributes")
        if correct:
            extra = attrs.attribute_count - trial.mrq.attribute_count
            return 100 - PENALTY * extra
    return 0


def sa_score(trials: list[SATrial]) -> float:
    if not trials:
        raise ValueError("sa_score needs at least one trial")
    return math.fsum(trial_sa(t) for t in trials) / len(trials)


def escalation(scene: Scene, target_id: int) -> list[AttributeSet]:
    """MRQ followed by queries adding one true attribute at a time (up to four)."""
    mrq = compute_mrq(scene, target_id)
    obj = scene.object(target_id)
    truth = {
        "color": obj.color,
        "size": obj.size_class,
        "shape": obj.shape_descriptor,
        "position": (position_descriptors(scene, obj) or [None])[0],
    }
    chain = [mrq]
    current = mrq.to_dict()
    for name in FIELD_PRIORITY:
        if chain[-1].attribute_count >= MAX_ATTRIBUTES:
            break
        if current[name] is None and truth[name] is not None:
            current[name] = truth[name]
            chain.append(AttributeSet(**current))
    return chain


def run_trial(
    scene: Scene,
    target_id: int,
    segment: Callable[[str], np.ndarray],
    correct_iou: float = 0.5,
    template_id: int = 0,
) -> SATrial:
    """Query ``segment`` with escalating descriptions until it hits the target."""
    gt = scene.object(target_id).gt_mask
    chain = escalation(scene, target_id)
    trial = SATrial(chain[0], scene_id=scene.id, target_id=target_id)
    for attrs in chain:
        mask = segment(realize(attrs, template_id))
        ok = iou(mask, gt) >= correct_iou
        trial.attempts.append((attrs, ok))
        if ok:
            break
    return trial
