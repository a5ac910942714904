"""Report files: JSON record, flat tables and plot-data series.

Files written by :func:`emit_report`::

    report.json                  list of MetricsReport records (schema filmseg-metrics v1)
    table_vocab.tsv              model, seen IoU, unseen IoU, P@X on test_unseen
    table_attributes_<split>.tsv model, IoU, A=1..4, P@X
    plot_attributes_<split>.tsv  model, attribute_count, mean_iou, n (one row per bucket)
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .evaluate import BUCKETS, MetricsReport


def _fmt(x: float, pct: bool = False) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-"
    return f"{x:.2f}" if pct else f"{x:.4f}"


def dumps_reports(reports: list[MetricsReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=1) + "\n"


def loads_reports(text: str) -> list[MetricsReport]:
    return [MetricsReport.from_dict(d) for d in json.loads(text)]


def _vocab_table(reports: list[MetricsReport]) -> str:
    thresholds = reports[0].thresholds
    head = ["model", "test_seen_iou", "test_unseen_iou"] + [f"P@{x}" for x in thresholds]
    rows = ["\t".join(head)]
    for r in reports:
        seen = r.splits.get("test_seen")
        unseen = r.splits.get("test_unseen")
        cells = [r.identity.tag, _fmt(seen.mean_iou if seen else None), _fmt(unseen.mean_iou if unseen else None)]
        cells += [_fmt(unseen.precision[x], pct=True) if unseen else "-" for x in thresholds]
        rows.append("\t".join(cells))
    return "\n".join(rows) + "\n"


def _attribute_table(reports: list[MetricsReport], split: str) -> str:
    thresholds = reports[0].thresholds
    head = ["model", "iou"] + [f"A={b}" for b in BUCKETS] + [f"P@{x}" for x in thresholds]
    rows = ["\t".join(head)]
    for r in reports:
        m = r.splits.get(split)
        if m is None:
            continue
        cells = [r.identity.tag, _fmt(m.mean_iou)] + [_fmt(m.bucket_iou[b]) for b in BUCKETS]
        cells += [_fmt(m.precision[x], pct=True) for x in thresholds]
        rows.append("\t".join(cells))
    return "\n".join(rows) + "\n"


def _plot_data(reports: list[MetricsReport], split: str) -> str:
    rows = ["model\tattribute_count\tmean_iou\tn"]
    for r in reports:
        m = r.splits.get(split)
        if m is None:
            continue
        for b in BUCKETS:
            rows.append(f"{r.identity.tag}\t{b}\t{_fmt(m.bucket_iou[b])}\t{m.bucket_n[b]}")
    return "\n".join(rows) + "\n"


def emit_report(reports: list[MetricsReport] | MetricsReport, directory) -> list[Path]:
    if isinstance(reports, MetricsReport):
        reports = [reports]
    if not reports:
        raise ValueError("nothing to report")
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    files = {"report.json": dumps_reports(reports), "table_vocab.tsv": _vocab_table(reports)}
    splits = sorted({s for r in reports for s in r.splits})
    for split in splits:
        files[f"table_attributes_{split}.tsv"] = _attribute_table(reports, split)
        files[f"plot_attributes_{split}.tsv"] = _plot_data(reports, split)
    written = []
    for name, text in files.items():
        path = root / name
        path.write_text(text)
        written.append(path)
    return written
