"""Mask IoU, instance scoring, average precision, and mean IoU."""

from dataclasses import dataclass, field

import numpy as np

from .core import LabelImage
from .propagation import InstanceScoreStack


@dataclass(frozen=True)
class ScoredInstance:
    class_id: int
    mask: np.ndarray  # (H, W) bool
    score: float


@dataclass
class EvalReport:
    ap: dict[float, float]                      # threshold -> class-mean AP
    ap_defined: bool
    per_class_ap: dict[float, dict[int, float]]
    mean_iou: float
    per_class_iou: dict[int, float]
    matches: list[tuple[float, int, int, int | None]] = field(default_factory=list)
    # matches rows: (threshold, class, prediction rank, matched gt index or None)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks. Two empty masks have
    no defined overlap and raise."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("masks disagree on shape")
    union = np.logical_or(a, b).sum()
    if union == 0:
        raise ValueError("IoU of two empty masks is undefined")
    return float(np.logical_and(a, b).sum() / union)


def instances_from_labels(labels: LabelImage) -> list[tuple[int, int, np.ndarray]]:
    """(class_id, instance_id, mask) for every instance in the image,
    ordered by (class_id, instance_id)."""
    out = []
    for k in np.unique(labels.instance_plane):
        if k == 0:
            continue
        mask = labels.instance_plane == k
        c = int(labels.class_plane[mask][0])
        out.append((c, int(k), mask))
    out.sort(key=lambda t: (t[0], t[1]))
    return out


def score_instances(labels: LabelImage, stack: InstanceScoreStack) -> list[ScoredInstance]:
    """Each labeled instance scored by the peak of its own channel inside
    its mask. A labeled instance without a matching channel is an error."""
    if labels.shape != stack.shape:
        raise ValueError("labels and scores disagree on grid shape")
    out = []
    for c, k, mask in instances_from_labels(labels):
        plane = stack.channel(c, k)  # KeyError -> caller sees the misuse
        out.append(ScoredInstance(c, mask, float(plane[mask].max())))
    return out


def _class_ap(preds: list[ScoredInstance], gt_masks: list[np.ndarray],
              threshold: float, matches_out: list, class_id: int) -> float:
    order = sorted(range(len(preds)), key=lambda n: -preds[n].score)
    taken = [False] * len(gt_masks)
    flags = []
    for rank, n in enumerate(order):
        best_iou, best_g = 0.0, None
        for g, gm in enumerate(gt_masks):
            if taken[g]:
                continue
            iou = mask_iou(preds[n].mask, gm)
            if iou > best_iou:
                best_iou, best_g = iou, g
        if best_g is not None and best_iou >= threshold:
            taken[best_g] = True
            flags.append(True)
            matches_out.append((threshold, class_id, rank, best_g))
        else:
            flags.append(False)
            matches_out.append((threshold, class_id, rank, None))
    # area under the exact precision-recall step curve
    ap, tp = 0.0, 0
    for k, hit in enumerate(flags, start=1):
        if hit:
            tp += 1
            ap += (tp / k) / len(gt_masks)
    return ap


def ap_r(preds: list[ScoredInstance], gts: list[tuple[int, np.ndarray]],
         thresholds: tuple[float, ...] = (0.5, 0.7)) -> EvalReport:
    """Region average precision at each IoU threshold.

    Per class: predictions sorted by descending score (ties keep input
    order), each greedily matched to the highest-IoU unmatched ground
    truth of its class at or above the threshold; AP integrates the raw
    precision-recall steps. The report averages over classes that have
    at least one ground truth; with no ground truth at all the means are
    NaN and flagged undefined.
    """
    classes = sorted({c for c, _ in gts})
    report = EvalReport(ap={}, ap_defined=bool(classes), per_class_ap={},
                        mean_iou=float("nan"), per_class_iou={})
    for thr in thresholds:
        per_class = {}
        for c in classes:
            gt_masks = [m for cc, m in gts if cc == c]
            cpreds = [p for p in preds if p.class_id == c]
            per_class[c] = _class_ap(cpreds, gt_masks, thr, report.matches, c)
        report.per_class_ap[thr] = per_class
        report.ap[thr] = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return report


def miou(pred: LabelImage, gt: LabelImage) -> tuple[float, dict[int, float]]:
    """Mean IoU over the class planes, background included as class 0;
    the mean runs over classes present in either image."""
    if pred.shape != gt.shape:
        raise ValueError("label images disagree on grid shape")
    classes = sorted(set(np.unique(gt.class_plane)) | set(np.unique(pred.class_plane)))
    per_class = {}
    for c in classes:
        gm = gt.class_plane == c
        pm = pred.class_plane == c
        per_class[int(c)] = float(np.logical_and(gm, pm).sum() / np.logical_or(gm, pm).sum())
    return float(np.mean(list(per_class.values()))), per_class
