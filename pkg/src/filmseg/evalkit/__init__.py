"""Metrics, attribute bucketing, SA scoring and report files."""

from .evaluate import (
    BUCKETS,
    EmptyPredictor,
    FingerprintMismatchError,
    MetricsReport,
    ModelIdentity,
    OraclePredictor,
    SplitMetrics,
    aggregate,
    evaluate,
)
from .extract import NoHeadNounError, extract_attributes, head_noun
from .metrics import DEFAULT_THRESHOLDS, MetricsConfig, NoSamplesError, iou, precision_at
from .report import dumps_reports, emit_report, loads_reports
from .sa import PENALTY, ProtocolViolationError, SATrial, escalation, run_trial, sa_score, trial_sa

__all__ = [name for name in dir() if not name.startswith("_")]
