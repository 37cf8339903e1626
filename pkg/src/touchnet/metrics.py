"""ROC curves, AUROC, confusion counts and balanced accuracy.

A sample is predicted positive iff its score is strictly greater than the
threshold. Tied scores always move together, so every ROC vertex corresponds
to one distinct score value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from .errors import ValidationError

THRESHOLD_RULES = ("balanced_arithmetic", "balanced_geometric")


class ConfusionCounts(NamedTuple):
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def tpr(self) -> float:
        return self.tp / (self.tp + self.fn)

    @property
    def tnr(self) -> float:
        return self.tn / (self.tn + self.fp)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    # integer counts behind each vertex; used for an exact area
    fp: np.ndarray
    tp: np.ndarray

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))

    @property
    def n_pos(self) -> int:
        return int(self.tp[-1])

    @property
    def n_neg(self) -> int:
        return int(self.fp[-1])


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def _require_both(y: np.ndarray) -> None:
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise ValidationError("both classes must be present")


def roc_curve(scores, labels) -> RocCurve:
    """ROC vertices from threshold = max score (nothing positive) down to -inf."""
    s, y = _check(scores, labels)
    _require_both(y)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each group of equal scores, in descending score order
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.r_[0, np.cumsum(y)[ends]]
    fp = np.r_[0, (ends + 1) - tp[1:]]
    # vertex k counts everything scored above thresholds[k]
    thresholds = np.r_[s[ends], -np.inf]
    n_pos, n_neg = tp[-1], fp[-1]
    return RocCurve(fpr=fp / n_neg, tpr=tp / n_pos, thresholds=thresholds, fp=fp, tp=tp)


def auroc(curve_or_scores, labels=None) -> float:
    """Trapezoidal area under the ROC curve.

    Accepts a :class:`RocCurve` or ``(scores, labels)``. The area is summed in
    integer counts and divided once, so it equals the Mann-Whitney statistic
    with ties counted as one half.
    """
    curve = curve_or_scores if labels is None else roc_curve(curve_or_scores, labels)
    dfp = np.diff(curve.fp)
    area2 = np.sum(dfp * (curve.tp[1:] + curve.tp[:-1]))
    return float(area2) / (2.0 * curve.n_pos * curve.n_neg)


def confusion_at(scores, labels, tau: float) -> ConfusionCounts:
    s, y = _check(scores, labels)
    pred = s > tau
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    n_pos = int(y.sum())
    return ConfusionCounts(tp=tp, fp=fp, tn=y.size - n_pos - fp, fn=n_pos - tp)


def balanced_accuracy(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0 or c.tn + c.fp == 0:
        raise ValidationError("balanced accuracy needs both classes")
    return (c.tp / (c.tp + c.fn) + c.tn / (c.tn + c.fp)) / 2.0


def geometric_accuracy(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0 or c.tn + c.fp == 0:
        raise ValidationError("geometric accuracy needs both classes")
    return float(np.sqrt((c.tp / (c.tp + c.fn)) * (c.tn / (c.tn + c.fp))))


def threshold_objective(tpr, tnr, rule: str):
    if rule == "balanced_arithmetic":
        return (tpr + tnr) / 2.0
    if rule == "balanced_geometric":
        return np.sqrt(tpr * tnr)
    raise ValueError(f"unknown threshold rule {rule!r}; choose from {THRESHOLD_RULES}")


def candidate_thresholds(scores) -> np.ndarray:
    """Midpoints of consecutive distinct scores plus one sentinel either side.

    Every distinct confusion matrix reachable by a strict threshold is
    produced by exactly one candidate.
    """
    u = np.unique(np.asarray(scores, dtype=float))
    lo, hi = u[:-1], u[1:]
    mid = lo + (hi - lo) / 2.0
    # adjacent floats: the midpoint may round up onto hi, which would flip hi's side
    mid = np.where(mid >= hi, lo, mid)
    below = np.nextafter(u[0], -np.inf)
    above = np.nextafter(u[-1], np.inf)
    return np.r_[below, mid, above]


def best_threshold(scores, labels, rule: str = "balanced_arithmetic") -> tuple[float, float]:
    """Candidate threshold maximising the rule; ties go to the smallest.

    Returns ``(threshold, objective)``.
    """
    s, y = _check(scores, labels)
    _require_both(y)
    cands = candidate_thresholds(s)
    # counts strictly above each candidate
    s_pos = np.sort(s[y == 1])
    s_neg = np.sort(s[y == 0])
    tp = s_pos.size - np.searchsorted(s_pos, cands, side="right")
    fp = s_neg.size - np.searchsorted(s_neg, cands, side="right")
    tpr = tp / s_pos.size
    tnr = (s_neg.size - fp) / s_neg.size
    obj = threshold_objective(tpr, tnr, rule)
    k = int(np.argmax(obj))  # first maximum = smallest threshold
    return float(cands[k]), float(obj[k])


@dataclass(frozen=True)
class Evaluation:
    auroc: float
    tpr: float
    tnr: float
    balanced_accuracy: float
    threshold: float

    def to_json(self) -> dict:
        return {
            "auroc": self.auroc,
            "tpr": self.tpr,
            "tnr": self.tnr,
            "balanced_accuracy": self.balanced_accuracy,
            "threshold": self.threshold,
        }


def evaluate_scores(scores, labels, threshold: float) -> Evaluation:
    c = confusion_at(scores, labels, threshold)
    return Evaluation(
        auroc=auroc(scores, labels),
        tpr=c.tpr,
        tnr=c.tnr,
        balanced_accuracy=balanced_accuracy(c),
        threshold=float(threshold),
    )


def write_roc_csv(curve: RocCurve, path: str | Path) -> Path:
    path = Path(path)
    pd.DataFrame({"threshold": curve.thresholds, "fpr": curve.fpr, "tpr": curve.tpr}).to_csv(
        path, index=False, float_format="%.17g"
    )
    return path


def write_metrics_json(evaluation: Evaluation, path: str | Path, extra: dict | None = None) -> Path:
    path = Path(path)
    payload = evaluation.to_json()
    if extra:
        payload.update(extra)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
