"""Discrimination and calibration metrics, and cross-fold aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError


def _check(scores, labels, need_both: bool = True):
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise DataError(f"{s.size} scores but {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0/1")
    y = y.astype(np.int64)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DataError("no positive labels")
    if need_both and n_pos == y.size:
        raise DataError("no negative labels")
    return s, y


def auroc(scores, labels) -> float:
    """Mann-Whitney U / (n_pos * n_neg), ties counted one half."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    ranks = rankdata(s)  # average ranks: half-integers, exact in float
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _threshold_counts(s, y):
    """Cumulative (tp, fp) at each distinct score, descending."""
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return tp.astype(float), fp.astype(float)


def auprc(scores, labels) -> float:
    """Average precision: sum over thresholds of (R_k - R_{k-1}) * P_k."""
    s, y = _check(scores, labels, need_both=False)
    tp, fp = _threshold_counts(s, y)
    precision = tp / (tp + fp)
    recall = tp / tp[-1]
    d_recall = np.diff(np.r_[0.0, recall])
    return float(np.sum(d_recall * precision))


def roc_points(scores, labels) -> np.ndarray:
    """(fpr, tpr) rows from (0, 0) to (1, 1); tied scores form one diagonal step."""
    s, y = _check(scores, labels)
    tp, fp = _threshold_counts(s, y)
    tpr = np.r_[0.0, tp / tp[-1]]
    fpr = np.r_[0.0, fp / fp[-1]]
    return np.column_stack([fpr, tpr])


def pr_points(scores, labels) -> np.ndarray:
    """(recall, precision) at each distinct threshold, descending score."""
    s, y = _check(scores, labels, need_both=False)
    tp, fp = _threshold_counts(s, y)
    return np.column_stack([tp / tp[-1], tp / (tp + fp)])


def trapezoid_area(points: np.ndarray) -> float:
    x, yv = points[:, 0], points[:, 1]
    return float(np.sum(np.diff(x) * (yv[1:] + yv[:-1]) / 2.0))


@dataclass
class CalibrationCurve:
    mean_predicted: np.ndarray
    observed_fraction: np.ndarray
    count: np.ndarray

    @property
    def bins(self) -> list[tuple[float, float, int]]:
        return [(float(m), float(o), int(c))
                for m, o, c in zip(self.mean_predicted, self.observed_fraction, self.count)]

    def __len__(self):
        return len(self.count)


def calibration_curve(scores, labels, n_bins: int = 10) -> CalibrationCurve:
    """Equal-width bins on [0, 1]; empty bins are dropped."""
    if n_bins < 2:
        raise DataError("n_bins must be >= 2")
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if s.shape != y.shape:
        raise DataError(f"{s.size} scores but {y.size} labels")
    b = np.clip(np.floor(s * n_bins).astype(np.int64), 0, n_bins - 1)
    count = np.bincount(b, minlength=n_bins)
    ssum = np.bincount(b, weights=s, minlength=n_bins)
    ysum = np.bincount(b, weights=y, minlength=n_bins)
    keep = count > 0
    c = count[keep]
    return CalibrationCurve(ssum[keep] / c, ysum[keep] / c, c)


def calibration_slope_intercept(curve: CalibrationCurve) -> tuple[float, float]:
    """Count-weighted least-squares line through the reliability points."""
    x = np.asarray(curve.mean_predicted, dtype=float)
    yv = np.asarray(curve.observed_fraction, dtype=float)
    w = np.asarray(curve.count, dtype=float)
    if np.unique(x).size < 2:
        raise DataError("need at least two bins with distinct mean prediction")
    xm = np.sum(w * x) / w.sum()
    ym = np.sum(w * yv) / w.sum()
    slope = np.sum(w * (x - xm) * (yv - ym)) / np.sum(w * (x - xm) ** 2)
    return float(slope), float(ym - slope * xm)


@dataclass
class CVReport:
    metric: str
    task: str
    values: list[float] = field(default_factory=list)
    mean: float = float("nan")
    std: float = float("nan")

    def to_dict(self) -> dict:
        return {"metric": self.metric, "task": self.task, "values": list(self.values),
                "mean": self.mean, "std": self.std}


def cv_aggregate(values, metric: str = "", task: str = "") -> CVReport:
    """Mean and population (1/K) standard deviation across folds."""
    v = [float(x) for x in values]
    if not v:
        raise DataError("no fold values to aggregate")
    arr = np.asarray(v)
    return CVReport(metric, task, v, float(arr.mean()), float(arr.std(ddof=0)))
