"""Binary classification metrics with "good" as the positive class.

Rates whose denominator is zero are reported as ``None`` rather than 0 so a
degenerate trial cannot masquerade as a weak one.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .nn import bce_loss


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    fpr: Optional[float]
    auc: Optional[float]
    mean_loss: float
    counts: ConfusionCounts

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["counts"] = ConfusionCounts(**d["counts"])
        return cls(**d)


def _check_pair(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores but {labels.size} labels")
    if scores.size == 0:
        raise ValueError("no samples to evaluate")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Counts at ``threshold``; a score equal to the threshold predicts positive."""
    scores, labels = _check_pair(scores, labels)
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
    )


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def rates(counts: ConfusionCounts) -> dict:
    if counts.total == 0:
        raise ValueError("all confusion counts are zero")
    c = counts
    return {
        "accuracy": (c.tp + c.tn) / c.total,
        "precision": _ratio(c.tp, c.tp + c.fp),
        "recall": _ratio(c.tp, c.tp + c.fn),
        "fpr": _ratio(c.fp, c.fp + c.tn),
    }


def _require_both_classes(labels):
    if labels.min() == labels.max():
        raise ValueError("ROC analysis needs both positive and negative samples")


def _roc_counts(scores, labels):
    """Cumulative (fp, tp) counts at every distinct threshold, highest first."""
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # Only the last index of each run of equal scores is a threshold.
    last = np.r_[s[1:] != s[:-1], True]
    return np.r_[0, fp[last]], np.r_[0, tp[last]]


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """(fpr, tpr) points from (0, 0) to (1, 1), one per distinct threshold."""
    scores, labels = _check_pair(scores, labels)
    _require_both_classes(labels)
    fp, tp = _roc_counts(scores, labels)
    n_pos, n_neg = tp[-1], fp[-1]
    return [(f / n_neg, t / n_pos) for f, t in zip(fp.tolist(), tp.tolist())]


def auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve.

    Tied scores form a diagonal segment, so the area equals the probability
    that a random positive outscores a random negative, ties counting half.
    """
    scores, labels = _check_pair(scores, labels)
    _require_both_classes(labels)
    fp, tp = _roc_counts(scores, labels)
    # Integer arithmetic until the final division keeps the result exact.
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return twice_area / (2 * int(tp[-1]) * int(fp[-1]))


def pairwise_auc(scores, labels) -> float:
    """Mann-Whitney estimate by brute force over all (positive, negative) pairs."""
    scores, labels = _check_pair(scores, labels)
    _require_both_classes(labels)
    pos = scores[labels == 1][:, None]
    neg = scores[labels == 0][None, :]
    return float(np.mean((pos > neg) + 0.5 * (pos == neg)))


def evaluate_scores(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Full report: counts, rates, AUC (None for single-class input) and mean BCE."""
    scores, labels = _check_pair(scores, labels)
    mean_loss, _ = bce_loss(scores.reshape(-1, 1), labels.reshape(-1, 1).astype(np.float64))
    counts = confusion(scores, labels, threshold)
    r = rates(counts)
    area = auc(scores, labels) if labels.min() != labels.max() else None
    return MetricsReport(r["accuracy"], r["precision"], r["recall"], r["fpr"], area, mean_loss, counts)
