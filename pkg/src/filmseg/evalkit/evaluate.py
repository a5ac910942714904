"""Per-split evaluation with attribute-count buckets."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from ..scenegen.dataset import LabeledSample
from .extract import extract_attributes
from .metrics import MetricsConfig, NoSamplesError, iou, precision_at

BUCKETS: tuple[int, ...] = (1, 2, 3, 4)


class FingerprintMismatchError(ValueError):
    code = "fingerprint-mismatch"


@dataclass(frozen=True)
class ModelIdentity:
    tag: str
    checkpoint_fingerprint: str = ""
    dataset_hash: str = ""  # dataset the model was fitted on; empty if unbound
    seed: int = 0


class Predictor(Protocol):
    identity: ModelIdentity

    def predict(self, samples: Sequence[LabeledSample]) -> list[np.ndarray]: ...


@dataclass
class SplitMetrics:
    n: int
    mean_iou: float
    precision: dict[int, float]
    bucket_iou: dict[int, float]
    bucket_n: dict[int, int]
    sample_iou: dict[str, float] = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_iou": self.mean_iou,
            "precision": {str(k): v for k, v in self.precision.items()},
            "bucket_iou": {str(k): v for k, v in self.bucket_iou.items()},
            "bucket_n": {str(k): v for k, v in self.bucket_n.items()},
            "sample_iou": dict(sorted(self.sample_iou.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitMetrics":
        return cls(
            d["n"],
            d["mean_iou"],
            {int(k): v for k, v in d["precision"].items()},
            {int(k): v for k, v in d["bucket_iou"].items()},
            {int(k): v for k, v in d["bucket_n"].items()},
            dict(d["sample_iou"]),
        )


@dataclass
class MetricsReport:
    identity: ModelIdentity
    dataset_hash: str
    thresholds: tuple[int, ...]
    splits: dict[str, SplitMetrics]
    sa: dict | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": "filmseg-metrics",
            "version": 1,
            "identity": asdict(self.identity),
            "dataset_hash": self.dataset_hash,
            "thresholds": list(self.thresholds),
            "splits": {k: v.to_dict() for k, v in sorted(self.splits.items())},
            "sa": self.sa,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            ModelIdentity(**d["identity"]),
            d["dataset_hash"],
            tuple(d["thresholds"]),
            {k: SplitMetrics.from_dict(v) for k, v in d["splits"].items()},
            d.get("sa"),
            list(d.get("notes", [])),
        )


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else float("nan")


def aggregate(
    sample_iou: Mapping[str, float], sample_bucket: Mapping[str, int], config: MetricsConfig
) -> SplitMetrics:
    """Reduce per-sample IoUs keyed by sample id (order independent)."""
    if not sample_iou:
        raise NoSamplesError("cannot aggregate an empty split")
    ids = sorted(sample_iou)
    values = [sample_iou[i] for i in ids]
    bucket_iou, bucket_n = {}, {}
    for b in BUCKETS:
        members = [sample_iou[i] for i in ids if sample_bucket[i] == b]
        bucket_n[b] = len(members)
        bucket_iou[b] = _mean(members)
    return SplitMetrics(
        n=len(ids),
        mean_iou=_mean(values),
        precision={x: precision_at(values, x) for x in config.thresholds},
        bucket_iou=bucket_iou,
        bucket_n=bucket_n,
        sample_iou={i: sample_iou[i] for i in ids},
    )


def evaluate(
    predictor: Predictor,
    splits: Mapping[str, Sequence[LabeledSample]],
    metrics_config: MetricsConfig = MetricsConfig(),
    dataset_hash: str = "",
) -> MetricsReport:
    """Score a predictor on each named split.

    Samples are bucketed by the attribute count recovered from the query text.
    A predictor bound to a different dataset than ``dataset_hash`` is rejected.
    """
    identity = predictor.identity
    if identity.dataset_hash and dataset_hash and identity.dataset_hash != dataset_hash:
        raise FingerprintMismatchError(
            f"model {identity.tag} was fitted on dataset {identity.dataset_hash[:12]}, "
            f"evaluating on {dataset_hash[:12]}"
        )
    results = {}
    for name, samples in splits.items():
        if not samples:
            raise NoSamplesError(f"split {name} is empty")
        masks = predictor.predict(samples)
        sample_iou, sample_bucket = {}, {}
        for sample, mask in zip(samples, masks, strict=True):
            sample_iou[sample.sample_id] = iou(mask, sample.gt_mask, metrics_config.both_empty_iou)
            sample_bucket[sample.sample_id] = extract_attributes(sample.query.text).attribute_count
        results[name] = aggregate(sample_iou, sample_bucket, metrics_config)
    return MetricsReport(identity, dataset_hash, tuple(metrics_config.thresholds), results)


class OraclePredictor:
    """Returns the ground-truth mask; upper bound for sanity checks."""

    def __init__(self, tag: str = "oracle"):
        self.identity = ModelIdentity(tag)

    def predict(self, samples):
        return [s.gt_mask.copy() for s in samples]


class EmptyPredictor:
    def __init__(self, tag: str = "empty"):
        self.identity = ModelIdentity(tag)

    def predict(self, samples):
        return [np.zeros_like(s.gt_mask) for s in samples]
