"""Video-level detection metrics. Fake (label 1) is the positive class."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

REPORT_KEYS = ("auc", "pauc", "eer", "acc", "tpr", "fpr", "threshold", "n_videos")


class SingleClassError(ValueError):
    pass


@dataclass
class ScoreSet:
    video_ids: list[str]
    scores: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_dict(cls, video_scores: dict[str, float], video_labels: dict[str, int]) -> ScoreSet:
        ids = list(video_scores)
        return cls(
            ids,
            np.array([video_scores[v] for v in ids], dtype=np.float64),
            np.array([video_labels[v] for v in ids], dtype=np.int64),
        )

    @classmethod
    def from_arrays(cls, scores, labels) -> ScoreSet:
        scores = np.asarray(scores, dtype=np.float64)
        return cls([str(i) for i in range(scores.size)], scores, np.asarray(labels, dtype=np.int64))


@dataclass
class EvalReport:
    auc: float
    pauc: float
    eer: float
    acc: float
    tpr: float
    fpr: float
    threshold: float
    n_videos: int
    roc: list[tuple[float, float]] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_KEYS}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=False)


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """ROC points (fpr, tpr) sweeping thresholds over the unique scores, descending.

    Tied scores switch together. The curve runs from (0, 0) to (1, 1).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError(f"ROC needs both classes; got {n_pos} fake and {n_neg} real")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tps = np.cumsum(y == 1)
    fps = np.cumsum(y == 0)
    last_of_group = np.r_[np.diff(s) != 0, True]
    tpr = np.r_[0.0, tps[last_of_group] / n_pos]
    fpr = np.r_[0.0, fps[last_of_group] / n_neg]
    return fpr, tpr


def auc(fpr, tpr) -> float:
    """Trapezoidal area under the ROC."""
    fpr, tpr = np.asarray(fpr, float), np.asarray(tpr, float)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def pauc(fpr, tpr, max_fpr: float = 0.1) -> float:
    """Area under the ROC for fpr in [0, max_fpr], divided by max_fpr."""
    if not 0.0 < max_fpr <= 1.0:
        raise ValueError(f"max_fpr must be in (0, 1], got {max_fpr}")
    fpr, tpr = np.asarray(fpr), np.asarray(tpr)
    stop = np.searchsorted(fpr, max_fpr, side="right")
    xs, ys = list(fpr[:stop]), list(tpr[:stop])
    if xs[-1] < max_fpr:
        j = stop
        x0, x1, y0, y1 = fpr[j - 1], fpr[j], tpr[j - 1], tpr[j]
        xs.append(max_fpr)
        ys.append(y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0))
    return auc(np.array(xs), np.array(ys)) / max_fpr


def convex_hull(fpr, tpr) -> tuple[np.ndarray, np.ndarray]:
    """Upper convex hull of the ROC points (ROCCH)."""
    pts = sorted(set(zip(np.asarray(fpr, float), np.asarray(tpr, float))))
    hull: list[tuple[float, float]] = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            # drop the middle point unless it lies strictly above the chord
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    hx, hy = zip(*hull)
    return np.array(hx), np.array(hy)


def eer(fpr, tpr) -> float:
    """Equal error rate: where fpr = 1 - tpr on the ROC convex hull.

    The crossing is located by linear interpolation between adjacent hull
    vertices.
    """
    hx, hy = convex_hull(fpr, tpr)
    gap = hx + hy - 1.0  # fpr - fnr, nondecreasing along the hull
    for i in range(len(gap) - 1):
        if gap[i] <= 0.0 <= gap[i + 1]:
            if gap[i + 1] == gap[i]:
                return float(hx[i])
            t = -gap[i] / (gap[i + 1] - gap[i])
            return float(hx[i] + t * (hx[i + 1] - hx[i]))
    return float(hx[0])


def confusion_at(scores, labels, threshold: float = 0.5) -> tuple[float, float, float]:
    """(acc, tpr, fpr) predicting fake iff score >= threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = scores >= threshold
    pos, neg = labels == 1, labels == 0
    acc = float(np.mean(pred == pos))
    tpr = float(np.sum(pred & pos) / pos.sum()) if pos.any() else 0.0
    fpr = float(np.sum(pred & neg) / neg.sum()) if neg.any() else 0.0
    return acc, tpr, fpr


def mann_whitney_auc(scores, labels) -> float:
    """Brute-force pairwise AUC with ties counted as one half."""
    scores, labels = np.asarray(scores, float), np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    diff = pos[:, None] - neg[None, :]
    return float((np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / diff.size)


def evaluate(s: ScoreSet, threshold: float = 0.5, max_fpr: float = 0.1) -> EvalReport:
    fpr, tpr = roc_curve(s.scores, s.labels)
    acc, t_rate, f_rate = confusion_at(s.scores, s.labels, threshold)
    return EvalReport(
        auc=auc(fpr, tpr),
        pauc=pauc(fpr, tpr, max_fpr),
        eer=eer(fpr, tpr),
        acc=acc,
        tpr=t_rate,
        fpr=f_rate,
        threshold=float(threshold),
        n_videos=len(s.video_ids),
        roc=list(zip(fpr.tolist(), tpr.tolist())),
    )


def mean_reports(reports: Sequence[EvalReport]) -> dict[str, float]:
    return {k: float(np.mean([getattr(r, k) for r in reports])) for k in REPORT_KEYS}
