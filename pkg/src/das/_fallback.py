"""Pure numpy/scipy matching kernels.

Same contracts as the compiled ``das._kernels`` extension; selected at
import time when the extension is unavailable (or forced through the
``DAS_BACKEND`` environment variable).
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment


def lsap(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost one-to-one assignment of every row to a distinct column.

    Requires ``rows <= cols``; returns the assigned column per row.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.shape[0] > cost.shape[1]:
        raise ValueError("lsap requires rows <= cols; transpose first")
    _, col_ind = linear_sum_assignment(cost)
    return col_ind.astype(np.intp)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise intersection-over-union of two (n, 4) corner-format box arrays."""
    a = np.asarray(boxes_a, dtype=np.float64)
    b = np.asarray(boxes_b, dtype=np.float64)
    ix = (np.minimum(a[:, None, 2], b[None, :, 2])
          - np.maximum(a[:, None, 0], b[None, :, 0]))
    iy = (np.minimum(a[:, None, 3], b[None, :, 3])
          - np.maximum(a[:, None, 1], b[None, :, 1]))
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def _clamped_log_probs(probs: np.ndarray, eps: float):
    p = np.clip(np.asarray(probs, dtype=np.float64), eps, None)
    p /= p.sum(axis=1, keepdims=True)
    return p, np.log(p)


def match_cost_matrix(probs_a: np.ndarray, boxes_a: np.ndarray,
                      probs_b: np.ndarray, boxes_b: np.ndarray,
                      eps: float = 1e-12) -> np.ndarray:
    """Pairwise divergence-minus-overlap matching cost.

    Entry (i, j) is ``KL(probs_a[i] || probs_b[j]) - IoU(boxes_a[i], boxes_b[j])``
    with probabilities clamped to ``eps`` and renormalized before the logs.
    """
    pa, log_pa = _clamped_log_probs(probs_a, eps)
    _, log_qb = _clamped_log_probs(probs_b, eps)
    self_term = np.einsum("ik,ik->i", pa, log_pa)
    kl = self_term[:, None] - pa @ log_qb.T
    return kl - iou_matrix(boxes_a, boxes_b)
