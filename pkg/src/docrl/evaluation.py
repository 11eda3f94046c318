"""Benchmark-style metrics over prediction files.

Per split: answer accuracy, detection accuracy at an IoU threshold
(Top-1 Accuracy@0.5 by default) and parse rate. The overall row is the
unweighted mean over splits. A dataset record without a prediction counts
as wrong on every metric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

from docrl.rewards import iou, reward_accuracy
from docrl.structured_output import StructuredResponse, parse
from docrl.synth import DataError, QASample, iter_jsonl

METRICS = ("answer_accuracy", "detection_acc_at_threshold", "parse_rate")


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    raw_output: str


@dataclass(frozen=True)
class SplitMetrics:
    n: int
    answer_accuracy: float
    detection_acc_at_threshold: float
    parse_rate: float


@dataclass(frozen=True)
class MetricsReport:
    splits: dict[str, SplitMetrics]
    average: SplitMetrics
    roi_threshold: float

    def as_dict(self) -> dict:
        return {
            "roi_threshold": self.roi_threshold,
            "splits": {k: v.__dict__ for k, v in self.splits.items()},
            "average": self.average.__dict__,
        }


def read_predictions(path) -> list[PredictionRecord]:
    out = []
    for lineno, obj in iter_jsonl(path):
        if not isinstance(obj.get("id"), str) or not isinstance(obj.get("raw_output"), str):
            raise DataError("prediction needs string fields 'id' and 'raw_output'", lineno)
        out.append(PredictionRecord(obj["id"], obj["raw_output"]))
    return out


def index_predictions(predictions: Iterable[PredictionRecord]) -> dict[str, str]:
    by_id: dict[str, str] = {}
    for p in predictions:
        if p.id in by_id:
            raise DataError(f"duplicate prediction id {p.id!r}")
        by_id[p.id] = p.raw_output
    return by_id


def _split_metrics(samples: list[QASample], by_id: Mapping[str, str], roi_threshold: float,
                   accuracy_mode: str) -> SplitMetrics:
    n = len(samples)
    if n == 0:
        return SplitMetrics(0, 0.0, 0.0, 0.0)
    acc = det = parsed = 0
    for s in samples:
        raw = by_id.get(s.id)
        if raw is None:
            continue
        out = parse(raw)
        if not isinstance(out, StructuredResponse):
            continue
        parsed += 1
        acc += int(reward_accuracy(out.final_answer, s.gt.answer, accuracy_mode))
        det += int(iou(out.bbox, s.gt.roi) >= roi_threshold)
    return SplitMetrics(n, acc / n, det / n, parsed / n)


def evaluate(dataset, predictions: Iterable[PredictionRecord], roi_threshold: float = 0.5,
             accuracy_mode: str = "exact") -> MetricsReport:
    """Score predictions against one dataset or a ``{split: samples}`` mapping."""
    if not 0 < roi_threshold <= 1:
        raise ValueError(f"roi threshold {roi_threshold} outside (0, 1]")
    splits = dict(dataset) if isinstance(dataset, Mapping) else {"all": list(dataset)}
    by_id = index_predictions(predictions)
    known = {s.id for samples in splits.values() for s in samples}
    unknown = sorted(set(by_id) - known)
    if unknown:
        raise DataError(f"prediction id {unknown[0]!r} not in dataset")
    per_split = {name: _split_metrics(list(samples), by_id, roi_threshold, accuracy_mode)
                 for name, samples in sorted(splits.items())}
    k = len(per_split)
    average = SplitMetrics(
        sum(m.n for m in per_split.values()),
        *(sum(getattr(m, f) for m in per_split.values()) / k if k else 0.0 for f in METRICS),
    )
    return MetricsReport(per_split, average, roi_threshold)


def report_emit(report: MetricsReport, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(report.as_dict(), sort_keys=True, indent=2)
    if fmt != "table":
        raise ValueError(f"unknown report format {fmt!r}")
    header = ["split", "n", "answer_acc", f"det_acc@{report.roi_threshold:g}", "parse_rate"]
    rows = [[name, str(m.n), *(f"{getattr(m, f):.4f}" for f in METRICS)]
            for name, m in report.splits.items()]
    a = report.average
    rows.append(["average", str(a.n), *(f"{getattr(a, f):.4f}" for f in METRICS)])
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in
                       enumerate(zip(r, widths))) for r in [header, *rows]]
    return "\n".join(lines)
