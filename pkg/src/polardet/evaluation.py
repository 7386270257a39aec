"""Detection evaluation: greedy IoU matching, PR curves and (m)AP.

Matching follows the usual VOC protocol. Detections are visited in
descending score order; each one matches the unmatched ground-truth box of
the same class with the highest rotated IoU, provided that IoU meets the
threshold. A matched detection is a true positive, everything else is a
false positive, and each ground truth can be claimed once. AP uses
all-point interpolation (area under the precision envelope).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoClasses, UndefinedRecall
from .geometry import QuadBox, rotated_iou
from .postprocess import Detection


@dataclass(frozen=True)
class PRPoint:
    recall: float
    precision: float
    score: float


@dataclass
class ClassEval:
    class_id: int
    ap: float
    num_gt: int
    num_det: int
    curve: list[PRPoint] = field(default_factory=list)


@dataclass
class EvalReport:
    iou_threshold: float
    mean_ap: float
    per_class: dict[int, ClassEval] = field(default_factory=dict)


def match_detections(detections: list[Detection], ground_truth: list[QuadBox],
                     iou_threshold: float) -> list[bool]:
    """Greedy matching; returns a TP flag per detection in input order."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    gt_taken = [False] * len(ground_truth)
    flags = [False] * len(detections)
    for i in order:
        det = detections[i]
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(ground_truth):
            if gt_taken[j] or gt.class_id != det.class_id:
                continue
            iou = rotated_iou(det.quad, gt)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= iou_threshold:
            gt_taken[best_j] = True
            flags[i] = True
    return flags


def precision_recall_curve(scores: list[float], tp_flags: list[bool],
                           num_gt: int) -> list[PRPoint]:
    """Cumulative precision/recall swept over descending score.

    One point per detection prefix; recall denominators use num_gt, which
    must be positive for recall to mean anything.
    """
    if num_gt < 1:
        raise UndefinedRecall("no ground-truth objects: recall is undefined")
    if len(scores) != len(tp_flags):
        raise ValueError("scores and tp_flags length mismatch")
    order = np.argsort([-s for s in scores], kind="stable")
    tps = np.cumsum([tp_flags[i] for i in order])
    ranks = np.arange(1, len(order) + 1)
    return [PRPoint(float(tp / num_gt), float(tp / rank), float(scores[i]))
            for i, tp, rank in zip(order, tps, ranks)]


def average_precision(curve: list[PRPoint], num_gt: int) -> float:
    """Area under the monotone precision envelope (all-point interpolation)."""
    if num_gt < 1:
        raise UndefinedRecall("no ground-truth objects: AP is undefined")
    if not curve:
        return 0.0
    recalls = np.concatenate(([0.0], [p.recall for p in curve]))
    precisions = np.concatenate(([0.0], [p.precision for p in curve]))
    # envelope: precision at recall r is the max precision at any recall >= r
    for k in range(len(precisions) - 2, -1, -1):
        precisions[k] = max(precisions[k], precisions[k + 1])
    ap = 0.0
    for k in range(1, len(recalls)):
        ap += (recalls[k] - recalls[k - 1]) * precisions[k]
    return float(ap)


def mean_ap(per_class_ap: dict[int, float]) -> float:
    if not per_class_ap:
        raise NoClasses("mean AP over zero classes is undefined")
    return float(np.mean(list(per_class_ap.values())))


def evaluate(detections_by_image: dict[str, list[Detection]],
             ground_truth_by_image: dict[str, list[QuadBox]],
             iou_threshold: float = 0.5) -> EvalReport:
    """Pool matches across images and compute per-class AP and mAP.

    Classes with zero ground-truth instances are excluded from the mean;
    detections for such classes still exist but have no defined recall.
    """
    image_ids = sorted(set(detections_by_image) | set(ground_truth_by_image))
    class_ids: set[int] = set()
    for img in image_ids:
        class_ids.update(g.class_id for g in ground_truth_by_image.get(img, []))
        class_ids.update(d.class_id for d in detections_by_image.get(img, []))

    scores: dict[int, list[float]] = {c: [] for c in class_ids}
    flags: dict[int, list[bool]] = {c: [] for c in class_ids}
    num_gt = {c: 0 for c in class_ids}
    for img in image_ids:
        dets = detections_by_image.get(img, [])
        gts = ground_truth_by_image.get(img, [])
        img_flags = match_detections(dets, gts, iou_threshold)
        for det, flag in zip(dets, img_flags):
            scores[det.class_id].append(det.score)
            flags[det.class_id].append(flag)
        for gt in gts:
            num_gt[gt.class_id] += 1

    report = EvalReport(iou_threshold=iou_threshold, mean_ap=0.0)
    aps: dict[int, float] = {}
    for c in sorted(class_ids):
        if num_gt[c] == 0:
            continue
        curve = precision_recall_curve(scores[c], flags[c], num_gt[c])
        ap = average_precision(curve, num_gt[c])
        aps[c] = ap
        report.per_class[c] = ClassEval(c, ap, num_gt[c], len(scores[c]), curve)
    report.mean_ap = mean_ap(aps)
    return report
