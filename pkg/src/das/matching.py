"""Flatness scoring: match original against perturbed predictions.

Per image, surviving detections from the original pass are matched
one-to-one against those from a weight-perturbed pass under the
divergence-minus-overlap cost ``KL(p_orig || p_pert) - IoU``. The
flatness index is the negated expectation of the optimal mean matched
cost over images and perturbation draws: 1.0 means the perturbed model
reproduced the original predictions exactly; lower means the outputs
moved more, i.e. a sharper parameter region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from das.backend import KernelBackend, active_backend
from das.errors import EmptyMatrix, LengthMismatch, NoContributingImages
from das.model import BoundingBox, CheckpointRecord, Detection

KL_EPS = 1e-12
DEFAULT_CONF_THRESH = 0.5


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area() + b.area() - inter)


def kl_divergence(p, q, eps: float = KL_EPS) -> float:
    """KL divergence (natural log) with eps-clamping and renormalization."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise LengthMismatch(f"probability vectors of length {p.size} vs {q.size}")
    p = np.clip(p, eps, None)
    q = np.clip(q, eps, None)
    p = p / p.sum()
    q = q / q.sum()
    return float(np.dot(p, np.log(p / q)))


def pair_cost(a: Detection, b: Detection) -> float:
    """Matching cost of one original/perturbed detection pair; >= -1 always."""
    return kl_divergence(a.probs, b.probs) - iou(a.bbox, b.bbox)


@dataclass(frozen=True)
class Assignment:
    """One-to-one matching of the smaller side into the larger."""

    pairs: tuple          # ((row, col), ...), sorted, len == min(n_rows, n_cols)
    total_cost: float


def hungarian_assign(cost_matrix, kernels: Optional[KernelBackend] = None) -> Assignment:
    """Optimal one-to-one assignment minimizing total cost.

    Rectangular matrices are handled by assigning every row when
    rows <= cols, otherwise every column (solve on the transpose).
    """
    m = np.asarray(cost_matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise EmptyMatrix(f"cost matrix with shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("cost matrix entries must be finite")
    kernels = kernels or active_backend()
    if m.shape[0] <= m.shape[1]:
        col4row = kernels.lsap(m)
        pairs = tuple((int(r), int(c)) for r, c in enumerate(col4row))
    else:
        row4col = kernels.lsap(np.ascontiguousarray(m.T))
        pairs = tuple(sorted((int(r), int(c)) for c, r in enumerate(row4col)))
    # exactly rounded, so the total does not depend on summation order
    total = math.fsum(m[r, c] for r, c in pairs)
    return Assignment(pairs=pairs, total_cost=total)


def filter_by_confidence(detections: Sequence[Detection],
                         conf_thresh: float) -> list:
    """Detections whose top class probability reaches the threshold."""
    return [d for d in detections if d.confidence >= conf_thresh]


def _detection_arrays(detections: Sequence[Detection]):
    probs = np.stack([d.probs for d in detections])
    boxes = np.stack([d.bbox.as_array() for d in detections])
    return probs, boxes


def image_flatness_cost(orig: Sequence[Detection], pert: Sequence[Detection],
                        kernels: Optional[KernelBackend] = None) -> Optional[float]:
    """Mean matched cost over the optimal assignment; None when a side is empty.

    The mean runs over ``min(len(orig), len(pert))`` matched pairs, so
    unmatched surplus predictions on the larger side do not contribute.
    """
    if not orig or not pert:
        return None
    kernels = kernels or active_backend()
    probs_o, boxes_o = _detection_arrays(orig)
    probs_p, boxes_p = _detection_arrays(pert)
    if probs_o.shape[1] != probs_p.shape[1]:
        raise LengthMismatch(
            f"probability vectors of length {probs_o.shape[1]} vs {probs_p.shape[1]}")
    cost = kernels.match_cost_matrix(probs_o, boxes_o, probs_p, boxes_p, KL_EPS)
    if cost.shape[0] <= cost.shape[1]:
        cols = kernels.lsap(cost)
        matched = cost[np.arange(cost.shape[0]), cols]
    else:
        rows = kernels.lsap(np.ascontiguousarray(cost.T))
        matched = cost[rows, np.arange(cost.shape[1])]
    return float(matched.mean())


def fis(ckpt: CheckpointRecord, conf_thresh: float = DEFAULT_CONF_THRESH,
        kernels: Optional[KernelBackend] = None) -> float:
    """Flatness index of one checkpoint; in (-inf, 1].

    Negated mean (over perturbation draws, then images) of the optimal
    matched cost. Images where either pass has no surviving detections
    are excluded from the expectation; a draw where every image drops
    out raises NoContributingImages.
    """
    kernels = kernels or active_backend()
    orig_by_id = ckpt.target_original.images_by_id()
    filtered_orig = {
        image_id: filter_by_confidence(img.detections, conf_thresh)
        for image_id, img in orig_by_id.items()
    }
    draw_means = []
    for pert in ckpt.target_perturbed:
        pert_by_id = pert.images_by_id()
        costs = []
        # Reduce in ascending image_id order so results are schedule-independent.
        for image_id in sorted(filtered_orig):
            pert_img = pert_by_id.get(image_id)
            if pert_img is None:
                continue
            cost = image_flatness_cost(
                filtered_orig[image_id],
                filter_by_confidence(pert_img.detections, conf_thresh),
                kernels=kernels)
            if cost is not None:
                costs.append(cost)
        if not costs:
            raise NoContributingImages(
                f"checkpoint {ckpt.checkpoint_id!r}: no image contributes to "
                f"perturbed draw {pert.pass_index} at conf_thresh={conf_thresh}")
        draw_means.append(float(np.mean(costs)))
    return -float(np.mean(draw_means))
