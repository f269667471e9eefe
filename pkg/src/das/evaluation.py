"""Ground-truth evaluation: mAP@0.5 and correlation against score series.

This is the supervised oracle used to validate the label-free scores:
detection average precision per class (VOC-style, all-point
interpolation) and the Pearson correlation of any metric series with
the mAP series across checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from das.errors import DegenerateVariance, LengthMismatch, NoGroundTruth
from das.matching import iou
from das.model import GroundTruthSet, PassDump

IOU_MATCH_THRESH = 0.5


@dataclass(eq=False)
class PRCurve:
    """Per-class detection ranking with its precision/recall sequences."""

    class_id: int
    confidences: np.ndarray  # sorted descending
    tp_flags: np.ndarray     # 1.0 where the ranked detection matched a GT
    precision: np.ndarray
    recall: np.ndarray       # non-decreasing
    num_gt: int


@dataclass(eq=False)
class MapResult:
    map50: float
    per_class: dict                      # class_id -> AP, classes with >= 1 GT
    curves: dict = field(default_factory=dict)  # class_id -> PRCurve


@dataclass(frozen=True)
class CorrelationResult:
    pcc: float
    n: int


def ap_from_pr(precision: np.ndarray, recall: np.ndarray) -> float:
    """Area under the precision envelope over recall (all-point interpolation)."""
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    changed = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


def class_pr_curve(dump: PassDump, gt: GroundTruthSet, class_id: int) -> PRCurve:
    """Rank detections of one class and mark greedy IoU matches as TP.

    Each detection claims the highest-IoU still-unmatched ground-truth
    object of its class in its image, counting as a true positive when
    that IoU reaches 0.5. Confidence ties break on (image_id, detection
    index) so the ranking is deterministic.
    """
    ranked = []
    for img in dump.images:
        for det_idx, det in enumerate(img.detections):
            if det.class_index + 1 == class_id:
                ranked.append((-det.confidence, img.image_id, det_idx, det))
    ranked.sort(key=lambda item: item[:3])

    gt_boxes = {image_id: [o.bbox for o in objects if o.class_id == class_id]
                for image_id, objects in gt.by_image.items()}
    num_gt = sum(len(v) for v in gt_boxes.values())
    matched = {image_id: [False] * len(boxes)
               for image_id, boxes in gt_boxes.items()}

    tp = np.zeros(len(ranked))
    for rank, (_, image_id, _, det) in enumerate(ranked):
        candidates = gt_boxes.get(image_id, [])
        best_iou, best_idx = 0.0, -1
        for gt_idx, box in enumerate(candidates):
            if matched[image_id][gt_idx]:
                continue
            overlap = iou(det.bbox, box)
            if overlap > best_iou:
                best_iou, best_idx = overlap, gt_idx
        if best_idx >= 0 and best_iou >= IOU_MATCH_THRESH:
            matched[image_id][best_idx] = True
            tp[rank] = 1.0

    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    denom = np.maximum(tp_cum + fp_cum, 1.0)
    precision = tp_cum / denom
    recall = tp_cum / num_gt if num_gt > 0 else np.zeros(len(ranked))
    return PRCurve(class_id=class_id,
                   confidences=np.array([-k for k, _, _, _ in ranked]),
                   tp_flags=tp, precision=precision, recall=recall,
                   num_gt=num_gt)


def map50(dump: PassDump, gt: Optional[GroundTruthSet],
          num_classes: int) -> MapResult:
    """mAP at IoU 0.5 over classes with at least one ground-truth instance."""
    if gt is None or gt.total_objects() == 0:
        raise NoGroundTruth("ground truth with at least one object is required")
    per_class = {}
    curves = {}
    for class_id in range(1, num_classes + 1):
        curve = class_pr_curve(dump, gt, class_id)
        if curve.num_gt == 0:
            continue  # AP undefined without positives
        curves[class_id] = curve
        per_class[class_id] = ap_from_pr(curve.precision, curve.recall)
    return MapResult(map50=float(np.mean(list(per_class.values()))),
                     per_class=per_class, curves=curves)


def pearson(x, y) -> CorrelationResult:
    """Sample Pearson correlation coefficient of two aligned series."""
    xa = np.asarray(list(x), dtype=np.float64)
    ya = np.asarray(list(y), dtype=np.float64)
    if xa.size != ya.size:
        raise LengthMismatch(f"series of length {xa.size} vs {ya.size}")
    if xa.size < 2:
        raise LengthMismatch("correlation needs at least 2 samples")
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateVariance("a series is constant; correlation undefined")
    return CorrelationResult(pcc=float(np.dot(dx, dy) / (sx * sy)), n=xa.size)


@dataclass(eq=False)
class SelectionReport:
    """Last/selected/oracle comparison plus per-metric correlations with mAP."""

    last_map: float
    selected_map: float
    oracle_map: float
    improvement: float
    improvement_str: str         # signed, two decimals, e.g. "+5.85"
    pcc_by_metric: dict          # metric name -> CorrelationResult or None
    notes: list


def selection_report(checkpoint_ids, selected_id: str, maps,
                     metric_series: Optional[dict] = None) -> SelectionReport:
    """Compare the selected checkpoint against the last and the oracle.

    ``maps`` aligns with ``checkpoint_ids`` (ordered by training index);
    ``metric_series`` maps metric names to aligned raw score series.
    """
    if len(checkpoint_ids) != len(maps):
        raise LengthMismatch("checkpoint ids and mAP series must align")
    if selected_id not in checkpoint_ids:
        raise ValueError(f"selected id {selected_id!r} not among checkpoints")
    maps = [float(v) for v in maps]
    last_map = maps[-1]
    selected_map = maps[list(checkpoint_ids).index(selected_id)]
    improvement = selected_map - last_map

    notes = []
    pcc_by_metric = {}
    for name, series in (metric_series or {}).items():
        if len(series) != len(maps):
            raise LengthMismatch(f"series {name!r} does not align with mAP series")
        if len(maps) < 2:
            pcc_by_metric[name] = None
            notes.append(f"{name}: correlation undefined (fewer than 2 checkpoints)")
            continue
        try:
            pcc_by_metric[name] = pearson(series, maps)
        except DegenerateVariance:
            pcc_by_metric[name] = None
            notes.append(f"{name}: correlation undefined (constant series)")

    return SelectionReport(last_map=last_map, selected_map=selected_map,
                           oracle_map=max(maps), improvement=improvement,
                           improvement_str=f"{improvement:+.2f}",
                           pcc_by_metric=pcc_by_metric, notes=notes)
