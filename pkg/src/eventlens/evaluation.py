"""Ranking metrics over window scores against labeled streams.

A window counts as truly anomalous when it contains more than
``threshold_records`` records with label 1; the engine's chi-squared scores
are then ranked against those labels with AUC-ROC and AUC-PR.  Tied scores
are handled as groups (equivalent to averaging ranks), so constant scores
come out at exactly 0.5 ROC.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, UndefinedMetricError

__all__ = [
    "EvalResult",
    "auc_pr",
    "auc_roc",
    "count_positive_records",
    "evaluate_reports",
]

DEFAULT_RECORD_THRESHOLD = 100


def _check_labels(labels: np.ndarray) -> None:
    pos = int(labels.sum())
    if pos == 0 or pos == labels.size:
        raise UndefinedMetricError(
            "AUC needs both anomalous and normal windows; "
            f"got {pos} positives out of {labels.size}"
        )


def _tie_groups(scores: np.ndarray, labels: np.ndarray):
    """Yield (n_pos, n_neg) per distinct score, highest score first."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    boundaries = np.flatnonzero(np.diff(s)) + 1
    for chunk in np.split(y, boundaries):
        yield int(chunk.sum()), int(chunk.size - chunk.sum())


def auc_roc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve; tied scores form single sweep steps."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ContractViolation("scores and labels must align")
    _check_labels(labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    area = 0.0
    tp = fp = 0
    for gp, gn in _tie_groups(scores, labels):
        # trapezoid over the diagonal step a tie group produces
        area += gn / n_neg * (tp + 0.5 * gp) / n_pos
        tp += gp
        fp += gn
    return float(min(max(area, 0.0), 1.0))


def auc_pr(scores, labels) -> float:
    """Trapezoidal area under precision-recall, swept from the top score down."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ContractViolation("scores and labels must align")
    _check_labels(labels)
    n_pos = int(labels.sum())
    tp = seen = 0
    prev_recall = 0.0
    prev_precision = None
    area = 0.0
    for gp, gn in _tie_groups(scores, labels):
        tp += gp
        seen += gp + gn
        recall = tp / n_pos
        precision = tp / seen
        if prev_precision is None:
            prev_precision = precision  # anchor the curve at recall 0
        area += 0.5 * (precision + prev_precision) * (recall - prev_recall)
        prev_recall, prev_precision = recall, precision
    return float(min(max(area, 0.0), 1.0))


def count_positive_records(
    t_start: np.ndarray,
    t_end: np.ndarray,
    record_times: np.ndarray,
    record_labels: np.ndarray,
) -> np.ndarray:
    """Per window, how many label-1 records fall in [t_start, t_end]."""
    record_times = np.asarray(record_times, dtype=float)
    record_labels = np.asarray(record_labels)
    pos_times = np.sort(record_times[record_labels != 0])
    lo = np.searchsorted(pos_times, np.asarray(t_start, dtype=float), side="left")
    hi = np.searchsorted(pos_times, np.asarray(t_end, dtype=float), side="right")
    return (hi - lo).astype(np.int64)


@dataclass(frozen=True)
class EvalResult:
    auc_roc: float
    auc_pr: float
    window_labels: np.ndarray      # bool per report
    positive_records: np.ndarray   # per report
    threshold_records: int

    def to_dict(self) -> dict:
        return {
            "auc_roc": self.auc_roc,
            "auc_pr": self.auc_pr,
            "n_windows": int(self.window_labels.size),
            "n_anomalous_windows": int(self.window_labels.sum()),
            "threshold_records": self.threshold_records,
        }


def evaluate_reports(
    reports: list[dict],
    record_times,
    record_labels,
    threshold_records: int = DEFAULT_RECORD_THRESHOLD,
) -> EvalResult:
    """Score ranked window reports against record labels.

    ``reports`` are JSONL-style dicts with at least ``score``, ``t_start``
    and ``t_end``; the label rule marks a window anomalous when its count of
    label-1 records exceeds ``threshold_records``.
    """
    if not reports:
        raise ContractViolation("no reports to evaluate")
    scores = np.array([r["score"] for r in reports], dtype=float)
    t_start = np.array([r["t_start"] for r in reports], dtype=float)
    t_end = np.array([r["t_end"] for r in reports], dtype=float)
    positives = count_positive_records(t_start, t_end, record_times, record_labels)
    labels = positives > threshold_records
    return EvalResult(
        auc_roc=auc_roc(scores, labels),
        auc_pr=auc_pr(scores, labels),
        window_labels=labels,
        positive_records=positives,
        threshold_records=threshold_records,
    )
