"""Score normalization, fusion, selection and label-free baselines.

All scores follow one direction convention: higher predicts a better
checkpoint (entropy and feature distance are negated accordingly), so
series can be compared and correlated without per-metric sign rules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from das.errors import (
    EmptyList,
    InsufficientSamples,
    LengthMismatch,
    NoDetections,
)
from das.matching import DEFAULT_CONF_THRESH
from das.model import PassDump

ENTROPY_EPS = 1e-12
DEFAULT_LAMBDA = 1.0


def min_max_normalize(values) -> list:
    """Map values to [0, 1]; a constant series maps to all 0.5 (ranking-neutral)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise EmptyList("cannot normalize an empty series")
    if not np.all(np.isfinite(arr)):
        raise ValueError("normalization requires finite values")
    lo, hi = float(arr.min()), float(arr.max())
    if hi == lo:
        return [0.5] * arr.size
    return [float(v) for v in (arr - lo) / (hi - lo)]


def das(fis_raw, pdr_raw, lam: float = DEFAULT_LAMBDA) -> list:
    """Combine normalized flatness and prototype-ratio series; range [0, 1+lam]."""
    if len(fis_raw) != len(pdr_raw):
        raise LengthMismatch(f"{len(fis_raw)} flatness vs {len(pdr_raw)} ratio values")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    fis_norm = min_max_normalize(fis_raw)
    pdr_norm = min_max_normalize(pdr_raw)
    return [f + lam * p for f, p in zip(fis_norm, pdr_norm)]


def select_best(das_values, fis_raw, checkpoint_ids) -> str:
    """Checkpoint id with the highest combined score.

    Ties break on higher raw flatness, then on the earlier checkpoint
    (ids are ordered by training index).
    """
    if not checkpoint_ids:
        raise EmptyList("no checkpoints to select from")
    if not (len(das_values) == len(fis_raw) == len(checkpoint_ids)):
        raise LengthMismatch("score series and checkpoint ids must align")
    best = max(range(len(checkpoint_ids)),
               key=lambda i: (das_values[i], fis_raw[i], -i))
    return checkpoint_ids[best]


# --------------------------------------------------------------------------
# detection-pooled baselines
# --------------------------------------------------------------------------

def _pooled_probs(dump: PassDump, conf_thresh: float) -> np.ndarray:
    rows = [d.probs
            for img in dump.images
            for d in img.detections
            if d.confidence >= conf_thresh]
    if not rows:
        raise NoDetections(
            f"no detection with confidence >= {conf_thresh} in {dump.domain} pass")
    return np.stack(rows)


def baseline_ps(dump: PassDump, conf_thresh: float = DEFAULT_CONF_THRESH) -> float:
    """Mean top-class probability over surviving detections."""
    return float(_pooled_probs(dump, conf_thresh).max(axis=1).mean())


def baseline_es(dump: PassDump, conf_thresh: float = DEFAULT_CONF_THRESH) -> float:
    """Negated mean Shannon entropy (natural log) of detection probabilities."""
    probs = _pooled_probs(dump, conf_thresh)
    entropy = -(probs * np.log(np.clip(probs, ENTROPY_EPS, None))).sum(axis=1)
    return float(-entropy.mean())


def baseline_atc(dump: PassDump, threshold: float,
                 conf_thresh: float = DEFAULT_CONF_THRESH) -> float:
    """Fraction of surviving detections whose confidence exceeds the threshold."""
    if not 0.0 <= threshold < 1.0:
        raise ValueError(f"threshold must be in [0, 1), got {threshold}")
    conf = _pooled_probs(dump, conf_thresh).max(axis=1)
    return float((conf > threshold).mean())


# --------------------------------------------------------------------------
# feature-distance baseline
# --------------------------------------------------------------------------

def pooled_features(dump: PassDump) -> np.ndarray:
    """All proposal features of a pass stacked into one (n, feature_dim) array."""
    rows = [p.feature for img in dump.images for p in img.proposals]
    if not rows:
        raise InsufficientSamples(f"{dump.domain} pass carries no proposal features")
    return np.stack(rows)


def spd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition (negative eigs clipped)."""
    m = np.asarray(matrix, dtype=np.float64)
    sym = (m + m.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def _covariance(features: np.ndarray, diagonal: bool):
    if diagonal:
        return features.var(axis=0, ddof=1)
    cov = np.cov(features, rowvar=False, ddof=1)
    return np.atleast_2d(cov)


def baseline_fd(source_props: PassDump, target_props: PassDump,
                mode: str = "full") -> float:
    """Negated Fréchet distance between Gaussians fit to pooled features.

    The squared distance is ``|mu_s - mu_t|^2 + Tr(S_s + S_t - 2 (S_s S_t)^0.5)``;
    the matrix square root is taken through the symmetric form
    ``S_s^0.5 S_t S_s^0.5``. Full covariance needs at least feature_dim + 1
    samples per domain, otherwise the diagonal estimator is forced.
    """
    if mode not in ("full", "diagonal"):
        raise ValueError(f"mode must be 'full' or 'diagonal', got {mode!r}")
    fs = pooled_features(source_props)
    ft = pooled_features(target_props)
    if fs.shape[0] < 2 or ft.shape[0] < 2:
        raise InsufficientSamples(
            f"need >= 2 features per domain, got {fs.shape[0]} source / "
            f"{ft.shape[0]} target")
    dim = fs.shape[1]
    diagonal = mode == "diagonal" or min(fs.shape[0], ft.shape[0]) < dim + 1
    mean_term = float(np.sum((fs.mean(axis=0) - ft.mean(axis=0)) ** 2))
    cov_s = _covariance(fs, diagonal)
    cov_t = _covariance(ft, diagonal)
    if diagonal:
        trace_term = float(np.sum((np.sqrt(cov_s) - np.sqrt(cov_t)) ** 2))
    else:
        root_s = spd_sqrt(cov_s)
        inner = root_s @ cov_t @ root_s
        cross_eigs = np.clip(np.linalg.eigvalsh((inner + inner.T) / 2.0), 0.0, None)
        trace_term = float(np.trace(cov_s) + np.trace(cov_t)
                           - 2.0 * np.sqrt(cross_eigs).sum())
    return -(mean_term + trace_term)


def fd_mode_forced_diagonal(source_props: PassDump, target_props: PassDump) -> bool:
    """True when full covariance is underdetermined for these passes."""
    fs = pooled_features(source_props)
    ft = pooled_features(target_props)
    return min(fs.shape[0], ft.shape[0]) < fs.shape[1] + 1


# --------------------------------------------------------------------------
# series container
# --------------------------------------------------------------------------

@dataclass(eq=False)
class ScoreSeries:
    """One metric across checkpoints, raw and min-max normalized."""

    metric_name: str
    checkpoint_ids: list
    raw: list
    normalized: list

    @classmethod
    def build(cls, metric_name: str, checkpoint_ids, raw) -> "ScoreSeries":
        if len(checkpoint_ids) != len(raw):
            raise LengthMismatch("checkpoint ids and raw values must align")
        return cls(metric_name=metric_name,
                   checkpoint_ids=list(checkpoint_ids),
                   raw=[float(v) for v in raw],
                   normalized=min_max_normalize(raw))
