import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fa_vesselkit.metrics import (
    THRESHOLDS,
    Confusion,
    Curve,
    auc,
    binarize,
    confusion,
    curve,
    dice,
    max_dice,
    otsu_threshold,
    scores,
    summary,
    write_curves_csv,
)
from oracles import enumerate_curves, otsu_scan, trapezoid


def test_confusion_four_pixels():
    assert confusion([1, 1, 0, 0], [1, 0, 1, 0]) == Confusion(1, 1, 1, 1)


def test_confusion_extremes():
    g = np.random.default_rng(0).random((6, 6)) < 0.5
    c = confusion(g, g)
    assert c.fp == c.fn == 0
    c = confusion(~g, g)
    assert c.tp == c.tn == 0
    with pytest.raises(ValueError):
        confusion(g, g[:5])


def test_scores_examples():
    assert scores(Confusion(2, 1, 0, 1)).dice == pytest.approx(4 / 6, abs=1e-15)
    s = scores(Confusion(5, 0, 7, 0))
    assert s.recall == s.precision == s.dice == 1.0 and s.fpr == 0.0
    assert scores(Confusion(0, 2, 3, 1)).dice == 0.0
    s = scores(Confusion(0, 0, 4, 0))
    assert s.recall is None and s.precision is None and s.dice is None


def test_roi_restricts_counts():
    pred = np.array([[1, 1], [0, 0]], bool)
    gt = np.array([[1, 0], [1, 0]], bool)
    roi = np.array([[1, 0], [1, 1]], bool)
    assert confusion(pred, gt, roi) == Confusion(1, 0, 1, 1)


@given(st.integers(0, 10_000))
def test_roi_additivity(seed):
    rng = np.random.default_rng(seed)
    pred, gt, roi = (rng.random((3, 7, 7)) < 0.5)
    a, b = confusion(pred, gt, roi), confusion(pred, gt, ~roi)
    assert tuple(x + y for x, y in zip(a, b)) == tuple(confusion(pred, gt))
    assert sum(a) == roi.sum()


def test_dice_symmetric():
    rng = np.random.default_rng(4)
    a, b = rng.random((2, 10, 10)) < 0.4
    assert dice(a, b) == dice(b, a)


def test_thresholds_strictly_decreasing():
    assert np.all(np.diff(THRESHOLDS) < 0)
    assert THRESHOLDS[0] > 1.0 and THRESHOLDS[-1] == 0.0


def test_perfect_soft_map():
    gt = np.random.default_rng(2).random((10, 10)) < 0.3
    soft = gt.astype(float)
    roc = curve(soft, gt, kind="roc")
    assert (0.0, 1.0) in list(zip(roc.x.tolist(), roc.y.tolist()))
    assert auc(roc) == 1.0
    assert max_dice(soft, gt)[0] == 1.0


def test_constant_soft_map():
    gt = np.random.default_rng(3).random((10, 10)) < 0.3
    roc = curve(np.full(gt.shape, 0.4), gt, kind="roc")
    assert set(zip(roc.x.tolist(), roc.y.tolist())) == {(0.0, 0.0), (1.0, 1.0)}
    assert auc(roc) == 0.5


def test_two_point_auc():
    assert auc(Curve("roc", np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.0, 1.0]))) == 0.5


def test_roc_monotone():
    rng = np.random.default_rng(8)
    soft = rng.random((20, 20))
    gt = rng.random((20, 20)) < 0.4
    roc = curve(soft, gt)
    assert np.all(np.diff(roc.x) >= 0) and np.all(np.diff(roc.y) >= 0)
    assert (roc.x[0], roc.y[0]) == (0.0, 0.0) and (roc.x[-1], roc.y[-1]) == (1.0, 1.0)


def test_random_scores_auc_half():
    rng = np.random.default_rng(0)
    soft = rng.random(10_000)
    gt = np.zeros(10_000, bool)
    gt[rng.permutation(10_000)[:5000]] = True
    assert abs(auc(curve(soft, gt)) - 0.5) <= 0.02


def test_curve_needs_both_classes():
    with pytest.raises(ValueError):
        curve(np.zeros(4), np.zeros(4, bool))


def test_three_by_three_worked_instance():
    soft = np.array([[0.9, 0.8, 0.1], [0.7, 0.3, 0.2], [0.6, 0.5, 0.4]])
    gt = np.array([[1, 1, 0], [0, 1, 0], [1, 0, 0]], bool)
    q = np.round(soft * 256) / 256
    roc, pr, best, _ = enumerate_curves(q, gt)
    assert auc(curve(q, gt, kind="roc")) == trapezoid(roc)
    assert auc(curve(q, gt, kind="pr")) == trapezoid(pr)
    assert max_dice(q, gt)[0] == best


def _grid_instance(rng):
    n = int(rng.integers(2, 65))
    soft = rng.integers(0, 257, n) / 256.0
    gt = rng.random(n) < rng.uniform(0.2, 0.8)
    gt[0], gt[-1] = True, False
    return soft, gt


@pytest.mark.parametrize("seed", range(20))
def test_matches_exhaustive_enumeration(seed):
    soft, gt = _grid_instance(np.random.default_rng(seed))
    roc, pr, best, best_t = enumerate_curves(soft, gt)
    assert auc(curve(soft, gt, kind="roc")) == trapezoid(roc)
    assert auc(curve(soft, gt, kind="pr")) == trapezoid(pr)
    md, t = max_dice(soft, gt)
    assert md == best
    # the reported threshold binarizes identically to the oracle's best threshold
    assert confusion(soft >= t, gt) == confusion(soft >= best_t, gt)


def test_max_dice_prefers_lowest_threshold():
    soft = np.array([0.75, 0.25])
    gt = np.array([True, False])
    md, t = max_dice(soft, gt)
    assert md == 1.0 and t == 65 / 256


def test_otsu_examples():
    img = np.array([0.2] * 50 + [0.8] * 50)
    r = otsu_threshold(img)
    assert 0.2 < r.threshold <= 0.8 and not r.degenerate
    assert otsu_threshold(np.full(9, 0.3)) == (0.5, True)


@pytest.mark.parametrize("seed", range(10))
def test_otsu_matches_scan(seed):
    rng = np.random.default_rng(seed)
    img = np.concatenate([rng.normal(0.3, 0.08, 200), rng.normal(0.7, 0.1, 150)]).clip(0, 1)
    if seed % 2:
        img = rng.random(300)
    assert otsu_threshold(img).threshold == otsu_scan(img)


def test_binarize_and_summary(tmp_path):
    rng = np.random.default_rng(6)
    gt = rng.random((16, 16)) < 0.3
    soft = np.clip(gt * 0.6 + rng.random((16, 16)) * 0.4, 0, 1)
    b = binarize(soft)
    assert b.dtype == bool
    s = summary(soft, gt)
    assert set(s) == {"auc_roc", "auc_pr", "max_dice", "argmax_threshold"}
    assert 0.9 < s["auc_roc"] <= 1.0
    path = tmp_path / "c.csv"
    write_curves_csv(path, curve(soft, gt, kind="roc"), curve(soft, gt, kind="pr"))
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 2 * THRESHOLDS.size
    assert {r["kind"] for r in rows} == {"roc", "pr"}
