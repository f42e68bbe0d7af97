from __future__ import annotations

import math

import numpy as np
import pytest

from labelsynth.core import GridShape, LabelImage
from labelsynth.evaluate import (
    ScoredInstance,
    ap_r,
    instances_from_labels,
    mask_iou,
    miou,
    score_instances,
)
from labelsynth.propagation import InstanceScoreStack


def _mask(h, w, coords):
    m = np.zeros((h, w), dtype=bool)
    for y, x in coords:
        m[y, x] = True
    return m


def test_mask_iou_values() -> None:
    a = _mask(2, 3, [(0, 0), (0, 1)])
    b = _mask(2, 3, [(0, 1), (0, 2)])
    assert mask_iou(a, b) == pytest.approx(1 / 3)
    assert mask_iou(a, a) == 1.0
    assert mask_iou(a, ~a) == 0.0
    with pytest.raises(ValueError):
        mask_iou(np.zeros((2, 3), bool), np.zeros((2, 3), bool))
    with pytest.raises(ValueError):
        mask_iou(a, np.zeros((3, 3), bool))


def test_instances_from_labels_ordering() -> None:
    shape = GridShape(2, 4)
    cls = np.array([[2, 2, 1, 0], [2, 2, 1, 0]], dtype=np.int32)
    ins = np.array([[3, 3, 1, 0], [3, 3, 1, 0]], dtype=np.int32)
    out = instances_from_labels(LabelImage(shape, cls, ins))
    assert [(c, k) for c, k, _ in out] == [(1, 1), (2, 3)]
    assert out[1][2].sum() == 4


def test_score_instances_uses_channel_peak_inside_mask() -> None:
    shape = GridShape(2, 2)
    cls = np.array([[1, 1], [0, 0]], dtype=np.int32)
    ins = np.array([[2, 2], [0, 0]], dtype=np.int32)
    labels = LabelImage(shape, cls, ins)
    planes = np.array([[[0.3, 0.8], [0.9, 0.0]]])  # peak inside mask is 0.8
    stack = InstanceScoreStack(shape, ((1, 2),), planes)
    scored = score_instances(labels, stack)
    assert len(scored) == 1
    assert scored[0].score == pytest.approx(0.8)
    empty = InstanceScoreStack(shape, ((1, 1),), planes)
    with pytest.raises(KeyError):
        score_instances(labels, empty)


def _ap_oracle(preds: list[ScoredInstance], gts: list[np.ndarray], thr: float) -> float:
    """Independent AP: greedy matching with explicit loops, then the
    recall-increment form of the step-curve integral."""
    order = sorted(range(len(preds)), key=lambda n: -preds[n].score)
    taken = [False] * len(gts)
    hits = []
    for n in order:
        best, best_g = 0.0, None
        for g, gm in enumerate(gts):
            if taken[g]:
                continue
            inter = np.logical_and(preds[n].mask, gm).sum()
            union = np.logical_or(preds[n].mask, gm).sum()
            iou = inter / union if union else 0.0
            if iou > best:
                best, best_g = iou, g
        if best_g is not None and best >= thr:
            taken[best_g] = True
            hits.append(True)
        else:
            hits.append(False)
    ap, tp, prev_recall = 0.0, 0, 0.0
    for k, hit in enumerate(hits, start=1):
        if hit:
            tp += 1
            recall = tp / len(gts)
            ap += (recall - prev_recall) * (tp / k)
            prev_recall = recall
    return ap


def test_perfect_predictions_score_ap_one() -> None:
    g1 = _mask(4, 4, [(0, 0), (0, 1)])
    g2 = _mask(4, 4, [(3, 3), (3, 2)])
    preds = [ScoredInstance(1, g1, 0.9), ScoredInstance(1, g2, 0.8)]
    report = ap_r(preds, [(1, g1), (1, g2)])
    assert report.ap[0.5] == pytest.approx(1.0)
    assert report.ap[0.7] == pytest.approx(1.0)
    assert report.ap_defined


def test_textbook_ap_with_interleaved_false_positive() -> None:
    g1 = _mask(6, 6, [(0, 0), (0, 1)])
    g2 = _mask(6, 6, [(5, 5), (5, 4)])
    junk = _mask(6, 6, [(2, 2), (2, 3)])
    preds = [ScoredInstance(1, g1, 0.9),
             ScoredInstance(1, junk, 0.8),
             ScoredInstance(1, g2, 0.7)]
    report = ap_r(preds, [(1, g1), (1, g2)])
    assert report.ap[0.5] == pytest.approx((1.0 + 2 / 3) / 2)


def test_trailing_false_positives_do_not_change_ap() -> None:
    g1 = _mask(6, 6, [(0, 0), (0, 1)])
    junk = _mask(6, 6, [(3, 3)])
    base = [ScoredInstance(1, g1, 0.9)]
    extra = base + [ScoredInstance(1, junk, 0.1)]
    assert ap_r(base, [(1, g1)]).ap[0.5] == ap_r(extra, [(1, g1)]).ap[0.5]


def test_ap_threshold_sensitivity() -> None:
    gt = _mask(4, 4, [(0, 0), (0, 1), (0, 2), (0, 3)])
    pred = _mask(4, 4, [(0, 0), (0, 1), (0, 2), (1, 0)])  # IoU = 3/5
    preds = [ScoredInstance(1, pred, 0.9)]
    report = ap_r(preds, [(1, gt)])
    assert report.ap[0.5] == pytest.approx(1.0)
    assert report.ap[0.7] == pytest.approx(0.0)


def test_ap_means_over_classes_with_ground_truth() -> None:
    g1 = _mask(4, 4, [(0, 0)])
    g2 = _mask(4, 4, [(3, 3)])
    preds = [ScoredInstance(1, g1, 0.9),
             ScoredInstance(2, g2, 0.8),
             ScoredInstance(7, _mask(4, 4, [(1, 1)]), 0.99)]  # class without gt
    report = ap_r(preds, [(1, g1), (2, _mask(4, 4, [(2, 2)]))])
    assert set(report.per_class_ap[0.5]) == {1, 2}
    assert report.ap[0.5] == pytest.approx((1.0 + 0.0) / 2)


def test_ap_undefined_without_any_ground_truth() -> None:
    report = ap_r([ScoredInstance(1, _mask(2, 2, [(0, 0)]), 0.5)], [])
    assert not report.ap_defined
    assert math.isnan(report.ap[0.5])


def test_ap_matches_independent_oracle_on_random_instances() -> None:
    rng = np.random.Generator(np.random.PCG64(61))
    for _ in range(12):
        h, w = 9, 9
        n_gt = int(rng.integers(1, 5))
        n_pred = int(rng.integers(1, 7))
        gts = []
        for _ in range(n_gt):
            m = rng.uniform(0, 1, (h, w)) < 0.25
            m[rng.integers(0, h), rng.integers(0, w)] = True
            gts.append(m)
        preds = []
        for _ in range(n_pred):
            m = rng.uniform(0, 1, (h, w)) < 0.25
            m[rng.integers(0, h), rng.integers(0, w)] = True
            preds.append(ScoredInstance(1, m, float(rng.uniform(0, 1))))
        report = ap_r(preds, [(1, g) for g in gts], thresholds=(0.3, 0.5))
        for thr in (0.3, 0.5):
            assert report.ap[thr] == pytest.approx(_ap_oracle(preds, gts, thr))


def test_score_ties_keep_input_order() -> None:
    # two predictions with equal scores: the first declared is ranked first,
    # so only it can claim the single ground truth
    gt = _mask(4, 4, [(0, 0), (0, 1)])
    near = _mask(4, 4, [(0, 0), (0, 1), (0, 2)])
    preds = [ScoredInstance(1, near, 0.5), ScoredInstance(1, gt, 0.5)]
    report = ap_r(preds, [(1, gt)], thresholds=(0.5,))
    # first pred matches at IoU 2/3 and takes the gt; exact second is junk
    assert report.ap[0.5] == pytest.approx(1.0)
    assert report.matches[0] == (0.5, 1, 0, 0)
    assert report.matches[1] == (0.5, 1, 1, None)


def test_miou_hand_example_and_perfect() -> None:
    shape = GridShape(1, 4)
    gt = LabelImage(shape, np.array([[1, 1, 0, 0]], dtype=np.int32),
                    np.array([[1, 1, 0, 0]], dtype=np.int32))
    pred = LabelImage(shape, np.array([[1, 0, 0, 2]], dtype=np.int32),
                      np.array([[1, 0, 0, 2]], dtype=np.int32))
    mean, per_class = miou(pred, gt)
    assert per_class[0] == pytest.approx(1 / 3)
    assert per_class[1] == pytest.approx(1 / 2)
    assert per_class[2] == pytest.approx(0.0)
    assert mean == pytest.approx((1 / 3 + 1 / 2 + 0) / 3)

    same, per = miou(gt, gt)
    assert same == 1.0 and set(per) == {0, 1}
    with pytest.raises(ValueError):
        miou(gt, LabelImage(GridShape(2, 2), np.zeros((2, 2), np.int32),
                            np.zeros((2, 2), np.int32)))
