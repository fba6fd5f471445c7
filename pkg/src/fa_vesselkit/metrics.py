"""Segmentation scores, ROC / PR curves, AUC, maximum Dice and Otsu thresholds.

Scores whose denominator is zero come back as ``None`` (undefined), never 0.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "Confusion",
    "Scores",
    "Curve",
    "OtsuResult",
    "LEVELS",
    "THRESHOLDS",
    "confusion",
    "scores",
    "dice",
    "curve",
    "auc",
    "max_dice",
    "otsu_threshold",
    "binarize",
    "summary",
    "write_curves_csv",
]

LEVELS = 256
# one level above 1 (nothing predicted), then k/256 for k = 256 .. 0
THRESHOLDS = np.concatenate([[(LEVELS + 1) / LEVELS], np.arange(LEVELS, -1, -1) / LEVELS])


class Confusion(NamedTuple):
    tp: int
    fp: int
    tn: int
    fn: int


class Scores(NamedTuple):
    recall: float | None
    fpr: float | None
    precision: float | None
    dice: float | None


def _check(*arrays):
    shape = np.shape(arrays[0])
    if any(np.shape(a) != shape for a in arrays):
        raise ValueError("inputs must share dimensions")


def confusion(pred, gt, roi=None) -> Confusion:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    roi = np.ones(gt.shape, dtype=bool) if roi is None else np.asarray(roi, dtype=bool)
    _check(pred, gt, roi)
    p, g = pred[roi], gt[roi]
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return Confusion(tp, fp, tn, fn)


def _ratio(num, den):
    return num / den if den else None


def scores(c: Confusion) -> Scores:
    return Scores(
        recall=_ratio(c.tp, c.tp + c.fn),
        fpr=_ratio(c.fp, c.fp + c.tn),
        precision=_ratio(c.tp, c.tp + c.fp),
        dice=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
    )


def dice(pred, gt, roi=None) -> float | None:
    return scores(confusion(pred, gt, roi)).dice


@dataclass
class Curve:
    kind: str  # "roc" or "pr"
    thresholds: np.ndarray
    x: np.ndarray
    y: np.ndarray

    @property
    def points(self):
        return list(zip(self.thresholds.tolist(), self.x.tolist(), self.y.tolist()))


def _sweep(soft, gt, roi):
    """Confusion counts for every threshold in THRESHOLDS, via a level histogram."""
    soft = np.asarray(soft, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    roi = np.ones(gt.shape, dtype=bool) if roi is None else np.asarray(roi, dtype=bool)
    _check(soft, gt, roi)
    s, g = soft[roi], gt[roi]
    # soft >= k/256  <=>  floor(256 * soft) >= k; scaling by 256 is exact
    level = np.clip(np.floor(s * LEVELS), 0, LEVELS).astype(np.int64)
    pos = np.bincount(level[g], minlength=LEVELS + 2)
    neg = np.bincount(level[~g], minlength=LEVELS + 2)
    # predicted positive at level k = count with level >= k; thresholds descend
    tp_by_level = np.cumsum(pos[::-1])[::-1]
    fp_by_level = np.cumsum(neg[::-1])[::-1]
    ks = np.concatenate([[LEVELS + 1], np.arange(LEVELS, -1, -1)])
    tp = tp_by_level[ks]
    fp = fp_by_level[ks]
    n_pos, n_neg = int(g.sum()), int((~g).sum())
    return tp, fp, n_pos, n_neg


def curve(soft, gt, roi=None, kind: str = "roc") -> Curve:
    """ROC (fpr, recall) or PR (recall, precision) over the fixed threshold sweep.

    For PR the first point, where nothing is predicted, takes precision 1.
    """
    kind = kind.lower()
    if kind not in ("roc", "pr"):
        raise ValueError("kind must be 'roc' or 'pr'")
    tp, fp, n_pos, n_neg = _sweep(soft, gt, roi)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ground truth inside the ROI must contain both classes")
    recall = tp / n_pos
    if kind == "roc":
        return Curve("roc", THRESHOLDS.copy(), fp / n_neg, recall)
    predicted = tp + fp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 1.0)
    return Curve("pr", THRESHOLDS.copy(), recall, precision)


def auc(c: Curve) -> float:
    """Trapezoidal area under the curve along its x-axis."""
    if len(c.x) < 2:
        raise ValueError("need at least two curve points")
    x = np.asarray(c.x, dtype=np.float64)
    y = np.asarray(c.y, dtype=np.float64)
    area = 0.0
    for i in range(1, x.size):
        area += (x[i] - x[i - 1]) * (y[i] + y[i - 1]) / 2.0
    return float(area)


def max_dice(soft, gt, roi=None) -> tuple[float, float]:
    """Best Dice over the threshold sweep and the (lowest) threshold reaching it."""
    tp, fp, n_pos, _ = _sweep(soft, gt, roi)
    fn = n_pos - tp
    den = 2 * tp + fp + fn
    best, best_t = -1.0, None
    for k in range(THRESHOLDS.size):
        if den[k] == 0:
            continue
        d = 2 * tp[k] / den[k]
        # thresholds descend, so >= keeps the lowest threshold on ties
        if d >= best:
            best, best_t = float(d), float(THRESHOLDS[k])
    if best_t is None:
        raise ValueError("Dice undefined at every threshold (empty ground truth and prediction)")
    return best, best_t


class OtsuResult(NamedTuple):
    threshold: float
    degenerate: bool


def otsu_threshold(img) -> OtsuResult:
    """Otsu's threshold on a 256-bin histogram of ``[0, 1]`` values.

    Pixels ``>= threshold`` form the upper class. A constant image has no
    between-class variance; it returns 0.5 flagged as degenerate.
    """
    v = np.asarray(img, dtype=np.float64).ravel()
    if v.size == 0 or v.min() == v.max():
        return OtsuResult(0.5, True)
    bins = np.clip(np.floor(v * 256), 0, 255).astype(np.int64)
    hist = np.bincount(bins, minlength=256).astype(np.float64)
    total = hist.sum()
    centers = np.arange(256)
    w0 = np.cumsum(hist)
    s0 = np.cumsum(hist * centers)
    best_k, best_var = 0, -1.0
    for k in range(255):
        n0 = w0[k]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        m0 = s0[k] / n0
        m1 = (s0[-1] - s0[k]) / n1
        var = n0 * n1 * (m0 - m1) ** 2
        if var > best_var:
            best_k, best_var = k, var
    if best_var < 0:
        return OtsuResult(0.5, True)
    return OtsuResult((best_k + 1) / 256.0, False)


def binarize(soft) -> np.ndarray:
    """Soft map to binary mask with Otsu's threshold."""
    t, _ = otsu_threshold(soft)
    return np.asarray(soft) >= t


def summary(soft, gt, roi=None) -> dict:
    roc = curve(soft, gt, roi, "roc")
    pr = curve(soft, gt, roi, "pr")
    md, mt = max_dice(soft, gt, roi)
    return {
        "auc_roc": auc(roc),
        "auc_pr": auc(pr),
        "max_dice": md,
        "argmax_threshold": mt,
    }


def write_curves_csv(path, *curves: Curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "threshold", "x", "y"])
        for c in curves:
            for t, x, y in c.points:
                w.writerow([c.kind, repr(t), repr(x), repr(y)])
