"""Classification and seizure-prediction metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import EmptyMatrix, MetricError, NoNegatives, NoPositives, OneClassOnly, ZeroDuration


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray                      # rows = true class, columns = predicted

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise MetricError(f"confusion matrix must be square, got shape {counts.shape}")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise MetricError("confusion matrix entries must be nonnegative integers")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int | None = None) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise MetricError("label and prediction arrays differ in length")
        k = n_classes or int(max(y_true.max(initial=-1), y_pred.max(initial=-1)) + 1) or 1
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyMatrix("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def cohen_kappa(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyMatrix("kappa of an empty confusion matrix")
    n = cm.total
    p_o = np.trace(cm.counts) / n
    p_e = float(np.dot(cm.counts.sum(axis=1), cm.counts.sum(axis=0))) / (n * n)
    if p_e == 1.0:
        return 0.0
    return float((p_o - p_e) / (1 - p_e))


def sens_spec(cm: ConfusionMatrix, positive_class: int = 1) -> tuple[float, float]:
    if cm.n_classes != 2:
        raise MetricError("sensitivity/specificity need a binary confusion matrix")
    neg = 1 - positive_class
    tp, fn = cm.counts[positive_class, positive_class], cm.counts[positive_class, neg]
    tn, fp = cm.counts[neg, neg], cm.counts[neg, positive_class]
    if tp + fn == 0:
        raise NoPositives("no positive samples")
    if tn + fp == 0:
        raise NoNegatives("no negative samples")
    return float(tp / (tp + fn)), float(tn / (tn + fp))


def fpr_per_hour(false_positive_epochs: int, interictal_hours: float) -> float:
    if interictal_hours <= 0:
        raise ZeroDuration("false-positive rate needs positive interictal duration")
    return false_positive_epochs / interictal_hours


def k_of_n_alarms(predictions, k: int, n: int, starts=None, window_s: float = 1.0) -> np.ndarray:
    """Alarm at epoch i when at least k positives fall in the n epoch-lengths ending at epoch i.

    Without ``starts`` the epochs are taken as contiguous; with them, epochs separated
    by a gap (e.g. dropped exclusion zones) do not vote for each other.
    """
    if not 1 <= k <= n:
        raise ValueError("smoothing needs 1 <= k <= n")
    p = np.asarray(predictions, dtype=np.int64)
    t = np.arange(len(p), dtype=np.float64) if starts is None else np.asarray(starts, dtype=np.float64)
    w = 1.0 if starts is None else window_s
    csum = np.concatenate([[0], np.cumsum(p)])
    first = np.searchsorted(t, t - (n - 0.5) * w, side="left")
    votes = csum[np.arange(len(p)) + 1] - csum[first]
    return (votes >= k).astype(np.int64)


def count_false_alarms(predictions, labels, groups=None, starts=None, window_s: float = 1.0,
                       smoothing: tuple[int, int] | None = None, positive_class: int = 1) -> int:
    """Positive predictions on negative epochs, optionally after per-group k-of-n smoothing."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    flagged = (predictions == positive_class).astype(np.int64)
    if smoothing is not None:
        groups = np.zeros(len(labels)) if groups is None else np.asarray(groups)
        starts = np.arange(len(labels), dtype=np.float64) * window_s if starts is None else np.asarray(starts)
        smoothed = np.zeros_like(flagged)
        for g in np.unique(groups):
            idx = np.flatnonzero(groups == g)
            idx = idx[np.argsort(starts[idx], kind="stable")]
            smoothed[idx] = k_of_n_alarms(flagged[idx], *smoothing, starts=starts[idx], window_s=window_s)
        flagged = smoothed
    return int(np.sum(flagged[labels != positive_class]))


def midranks(values) -> np.ndarray:
    """1-based ranks with ties sharing the average of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Area under the empirical ROC curve via the normalized Mann-Whitney statistic."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("AUC needs both classes present")
    ranks = midranks(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


# -- reports -------------------------------------------------------------------
REPORT_KEYS = ("accuracy", "kappa", "sensitivity", "specificity", "fpr_per_hour", "fpr_per_hour_smoothed",
               "auc")


@dataclass
class MetricsReport:
    accuracy: float
    kappa: float
    sensitivity: float | None = None
    specificity: float | None = None
    fpr_per_hour: float | None = None
    fpr_per_hour_smoothed: float | None = None
    auc: float | None = None
    n_samples: int = 0
    folds: list[dict] = field(default_factory=list)
    std: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"{k}={_fmt(getattr(self, k))}" for k in REPORT_KEYS]
        lines.append(f"n_samples={self.n_samples}")
        lines += [f"std.{k}={_fmt(v)}" for k, v in sorted(self.std.items())]
        for i, fold in enumerate(self.folds):
            lines += [f"fold{i}.{k}={_fmt(v)}" for k, v in sorted(fold.items())]
        return "\n".join(lines) + "\n"

    def save(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        txt, js = stem.with_suffix(".txt"), stem.with_suffix(".json")
        txt.write_text(self.to_text())
        js.write_text(self.to_json())
        return txt, js

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        data = json.loads(text)
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def _fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_from_predictions(y_true, y_pred, scores=None, interictal_hours: float | None = None,
                            groups=None, starts=None, window_s: float = 1.0,
                            smoothing: tuple[int, int] = (2, 3),
                            n_classes: int = 2) -> MetricsReport:
    """Full metric suite; binary-only quantities are filled when they are defined."""
    cm = ConfusionMatrix.from_predictions(y_true, y_pred, n_classes)
    report = MetricsReport(accuracy(cm), cohen_kappa(cm), n_samples=cm.total)
    if n_classes == 2:
        try:
            report.sensitivity, report.specificity = sens_spec(cm)
        except (NoPositives, NoNegatives):
            pass
        if scores is not None:
            try:
                report.auc = roc_auc(scores, np.asarray(y_true) == 1)
            except OneClassOnly:
                pass
        if interictal_hours:
            report.fpr_per_hour = fpr_per_hour(count_false_alarms(y_pred, y_true), interictal_hours)
            report.fpr_per_hour_smoothed = fpr_per_hour(
                count_false_alarms(y_pred, y_true, groups, starts, window_s, smoothing), interictal_hours)
    return report


def aggregate_folds(reports: list[MetricsReport]) -> MetricsReport:
    """Mean over folds with the population standard deviation of each metric."""
    if not reports:
        raise MetricError("no fold reports to aggregate")
    mean, std = {}, {}
    for key in REPORT_KEYS:
        values = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        if values:
            mean[key] = math.fsum(values) / len(values)
            std[key] = math.sqrt(math.fsum((v - mean[key]) ** 2 for v in values) / len(values))
    out = MetricsReport(mean.get("accuracy", float("nan")), mean.get("kappa", float("nan")),
                        **{k: mean.get(k) for k in REPORT_KEYS[2:]},
                        n_samples=sum(r.n_samples for r in reports),
                        folds=[{k: getattr(r, k) for k in REPORT_KEYS + ("n_samples",)} for r in reports],
                        std=std)
    return out
