"""Deterministic detection and analysis metrics.

Conventions: Fake is the positive class throughout; ties get half credit
(Mann-Whitney), so five-round scores drawn from {0, .2, .4, .6, .8, 1}
still give a well-defined AUC. Fully rejected samples are excluded from
ACC/AUC denominators and reported through the rejection rate instead.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .dataset import Label
from .errors import OneClassOnlyError


@dataclass(frozen=True)
class ScoredSample:
    sample_id: str
    score: float
    label: Label
    dataset_name: str = ""


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    fpr: float
    tpr: float


@dataclass
class MetricsSummary:
    acc: Optional[float]  # percent, None when undefined
    auc: Optional[float]  # percent
    rej: float  # percent
    n_total: int
    n_scored: int
    n_rejected: int
    roc_points: list[RocPoint] = field(default_factory=list)
    per_dataset: dict[str, "MetricsSummary"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "auc": self.auc,
            "rej": self.rej,
            "n_total": self.n_total,
            "n_scored": self.n_scored,
            "n_rejected": self.n_rejected,
            # The sentinel +inf threshold serializes as null: strict JSON
            # has no Infinity literal.
            "roc_points": [
                [p.threshold if math.isfinite(p.threshold) else None, p.fpr, p.tpr]
                for p in self.roc_points
            ],
            "per_dataset": {k: v.to_dict() for k, v in sorted(self.per_dataset.items())},
        }


def compute_acc(scored: list[ScoredSample], threshold: float = 0.5) -> Optional[float]:
    """Accuracy in percent; prediction is Fake iff score >= threshold.

    Returns None for an empty list (undefined, not zero).
    """
    if not scored:
        return None
    correct = 0
    for s in scored:
        predicted_fake = s.score >= threshold
        if predicted_fake == (s.label is Label.FAKE):
            correct += 1
    return correct / len(scored) * 100.0


def _tied_ranks(values: list[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j + 2) / 2.0  # average of 1-based ranks i+1..j+1
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def compute_auc(scored: list[ScoredSample]) -> tuple[float, list[RocPoint]]:
    """Rank-based AUC (percent) plus the full ROC point list.

    AUC is the Mann-Whitney statistic P(score_fake > score_real) + half the
    tie probability, computed from tied ranks. ROC points are enumerated at
    every distinct score threshold, from (0,0) to (1,1).
    """
    n_pos = sum(1 for s in scored if s.label is Label.FAKE)
    n_neg = len(scored) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnlyError(
            f"AUC needs both classes (got {n_pos} fake, {n_neg} real)"
        )
    ranks = _tied_ranks([s.score for s in scored])
    rank_sum_pos = sum(r for r, s in zip(ranks, scored) if s.label is Label.FAKE)
    auc = (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    points = [RocPoint(float("inf"), 0.0, 0.0)]
    tp = fp = 0
    by_score: dict[float, list[Label]] = defaultdict(list)
    for s in scored:
        by_score[s.score].append(s.label)
    for score in sorted(by_score, reverse=True):
        labels = by_score[score]
        tp += sum(1 for l in labels if l is Label.FAKE)
        fp += len(labels) - sum(1 for l in labels if l is Label.FAKE)
        points.append(RocPoint(score, fp / n_neg, tp / n_pos))
    return auc * 100.0, points


def trapezoid_auc(points: list[RocPoint]) -> float:
    """Trapezoidal integral of an ROC point list, in percent."""
    area = 0.0
    for a, b in zip(points, points[1:]):
        area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0
    return area * 100.0


def compute_rej(n_total: int, n_rejected: int) -> float:
    """Fully rejected samples as a percentage of all samples."""
    if n_total == 0:
        return 0.0
    return n_rejected / n_total * 100.0


def roc_points_csv(points: Iterable[RocPoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "fpr", "tpr"])
    for p in points:
        writer.writerow([repr(p.threshold), repr(p.fpr), repr(p.tpr)])
    return buf.getvalue()


def summarize_detection(
    scored: list[ScoredSample],
    n_rejected: int,
    rejected_datasets: Optional[dict[str, int]] = None,
) -> MetricsSummary:
    """Build the full MetricsSummary with per-dataset breakdown.

    Per-dataset AUC for a fake-only dataset is computed against the pooled
    real samples of the run (the usual per-forgery-set reporting
    convention); the pooled AUC over everything is the top-level figure.
    """
    rejected_datasets = rejected_datasets or {}
    n_total = len(scored) + n_rejected
    acc = compute_acc(scored)
    try:
        auc, points = compute_auc(scored)
    except OneClassOnlyError:
        auc, points = None, []
    summary = MetricsSummary(
        acc=acc,
        auc=auc,
        rej=compute_rej(n_total, n_rejected),
        n_total=n_total,
        n_scored=len(scored),
        n_rejected=n_rejected,
        roc_points=points,
    )

    reals = [s for s in scored if s.label is Label.REAL]
    by_dataset: dict[str, list[ScoredSample]] = defaultdict(list)
    for s in scored:
        by_dataset[s.dataset_name].append(s)
    for name in set(by_dataset) | set(rejected_datasets):
        subset = by_dataset.get(name, [])
        rej_n = rejected_datasets.get(name, 0)
        auc_pool = subset
        if subset and all(s.label is Label.FAKE for s in subset) and reals:
            auc_pool = subset + reals
        try:
            ds_auc, ds_points = compute_auc(auc_pool)
        except OneClassOnlyError:
            ds_auc, ds_points = None, []
        summary.per_dataset[name] = MetricsSummary(
            acc=compute_acc(subset),
            auc=ds_auc,
            rej=compute_rej(len(subset) + rej_n, rej_n),
            n_total=len(subset) + rej_n,
            n_scored=len(subset),
            n_rejected=rej_n,
            roc_points=ds_points,
        )
    return summary


def compute_method_acc(
    predictions: list[tuple[str, str]],
    truth: dict[str, str],
    dataset_of: dict[str, str],
) -> dict[str, float]:
    """Generation-method tracing accuracy (percent) per dataset.

    predictions: (sample_id, predicted method value) pairs; truth maps
    sample_id -> actual generator ("gan"/"diffusion"). An "unknown"
    prediction counts as incorrect.
    """
    correct: dict[str, int] = defaultdict(int)
    total: dict[str, int] = defaultdict(int)
    for sample_id, predicted in predictions:
        name = dataset_of.get(sample_id, "")
        total[name] += 1
        if predicted == truth.get(sample_id):
            correct[name] += 1
    return {name: correct[name] / total[name] * 100.0 for name in total}


def aggregate_localization(
    final_percents: list[tuple[str, float]],
    dataset_of: dict[str, str],
) -> dict[str, Optional[float]]:
    """Mean judge final score (percent) per dataset; None marks empty sets."""
    by_dataset: dict[str, list[float]] = defaultdict(list)
    for sample_id, value in final_percents:
        by_dataset[dataset_of.get(sample_id, "")].append(value)
    return {
        name: (sum(vals) / len(vals) if vals else None)
        for name, vals in by_dataset.items()
    }
