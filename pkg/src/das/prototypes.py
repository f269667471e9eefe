"""Soft class prototypes and the prototypical distance ratio.

A prototype is the probability-weighted mean of region-proposal
features for one class in one domain. The ratio of inter-category
spread (product of off-diagonal means within and across domains) to
cross-domain same-category distance summarizes how discriminative and
how well aligned a checkpoint's feature space is: higher is better.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from das.errors import DimMismatch, EmptyPass, ImageWithoutProposals, SingleClass
from das.model import PassDump

PDR_EPS = 1e-12


@dataclass(eq=False)
class PrototypeSet:
    """Per-class prototype vectors for one domain, shape (num_classes, feature_dim)."""

    matrix: np.ndarray
    domain: str


def soft_prototypes(proposals_pass: PassDump, num_classes: int, feature_dim: int,
                    top_n: Optional[int] = None) -> PrototypeSet:
    """Probability-weighted per-class feature means.

    Per image: mean over its proposals of ``feature * p_k`` for each
    foreground class k (the background entry is never used as a
    weight), then averaged over images. ``top_n`` optionally keeps only
    the N proposals with the highest foreground probability per image;
    default keeps all.
    """
    if not proposals_pass.images:
        raise EmptyPass(f"{proposals_pass.domain} pass has no images")
    by_id = proposals_pass.images_by_id()
    total = np.zeros((num_classes, feature_dim), dtype=np.float64)
    contributing = 0
    skipped = []
    # Ascending image_id order keeps the reduction schedule-independent.
    for image_id in sorted(by_id):
        img = by_id[image_id]
        if not img.proposals:
            skipped.append(image_id)
            continue
        features = np.stack([p.feature for p in img.proposals])
        probs = np.stack([p.probs for p in img.proposals])
        if features.shape[1] != feature_dim:
            raise DimMismatch(
                f"{image_id}: feature dim {features.shape[1]} != {feature_dim}")
        foreground = probs[:, :num_classes]
        if top_n is not None and features.shape[0] > top_n:
            order = np.argsort(-foreground.max(axis=1), kind="stable")[:top_n]
            features = features[order]
            foreground = foreground[order]
        total += foreground.T @ features / features.shape[0]
        contributing += 1
    if contributing == 0:
        raise ImageWithoutProposals(
            f"every image in the {proposals_pass.domain} pass lacks proposals")
    if skipped:
        warnings.warn(
            f"{len(skipped)} image(s) without proposals excluded from "
            f"{proposals_pass.domain} prototypes (e.g. {skipped[:3]})",
            stacklevel=2)
    return PrototypeSet(matrix=total / contributing, domain=proposals_pass.domain)


def pairwise_distance_matrix(p: PrototypeSet, q: PrototypeSet) -> np.ndarray:
    """Euclidean distances between every prototype of ``p`` and of ``q``."""
    a, b = p.matrix, q.matrix
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(f"feature dims {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def intra_distance(cross_matrix: np.ndarray) -> float:
    """Mean same-category distance: average of the cross-domain diagonal."""
    m = np.asarray(cross_matrix, dtype=np.float64)
    return float(np.trace(m) / m.shape[0])


def mean_offdiagonal(matrix: np.ndarray) -> float:
    """Mean over all ordered off-diagonal entries; undefined for one class."""
    m = np.asarray(matrix, dtype=np.float64)
    k = m.shape[0]
    if k < 2:
        raise SingleClass("off-diagonal mean needs at least 2 classes")
    return float((m.sum() - np.trace(m)) / (k * k - k))


def inter_distance(ps: PrototypeSet, pt: PrototypeSet) -> float:
    """Product of the three off-diagonal means (cross, source, target)."""
    return (mean_offdiagonal(pairwise_distance_matrix(ps, pt))
            * mean_offdiagonal(pairwise_distance_matrix(ps, ps))
            * mean_offdiagonal(pairwise_distance_matrix(pt, pt)))


def pdr(ps: PrototypeSet, pt: PrototypeSet) -> float:
    """Prototypical distance ratio; the intra term is floored at PDR_EPS."""
    intra = intra_distance(pairwise_distance_matrix(ps, pt))
    return inter_distance(ps, pt) / max(intra, PDR_EPS)
