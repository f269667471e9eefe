"""Domain types for checkpoint inference dumps.

A run is a set of checkpoints; each checkpoint carries serialized
inference passes (detections and region-proposal features) over the
source and target image sets. These types are the contract shared by
the parsers, the scoring modules and any external exporter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from das.errors import BoxViolation, MalformedRecord, ProbabilityViolation

# Exporters emit reduced-precision floats; sums within this tolerance are
# silently renormalized, anything worse is rejected.
PROB_SUM_TOL = 1e-4

DOMAIN_SOURCE = "source"
DOMAIN_TARGET = "target"
PASS_ORIGINAL = "original"
PASS_PERTURBED = "perturbed"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in absolute pixel corner coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise BoxViolation(f"non-finite box coordinates {coords}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise BoxViolation(f"inverted or empty box {coords}")

    @classmethod
    def from_seq(cls, seq) -> "BoundingBox":
        if len(seq) != 4:
            raise MalformedRecord(f"bbox needs 4 coordinates, got {len(seq)}")
        return cls(float(seq[0]), float(seq[1]), float(seq[2]), float(seq[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def as_probability_vector(values, expected_len: Optional[int] = None,
                          context: str = "probs") -> np.ndarray:
    """Validate and renormalize a probability vector.

    Entries must be finite and non-negative and the sum must be within
    ``PROB_SUM_TOL`` of 1; the returned vector is renormalized to sum to
    1 at float64 precision.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise MalformedRecord(f"{context}: expected a non-empty vector")
    if expected_len is not None and arr.size != expected_len:
        raise MalformedRecord(
            f"{context}: expected {expected_len} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ProbabilityViolation(f"{context}: non-finite entry")
    if np.any(arr < 0):
        raise ProbabilityViolation(f"{context}: negative entry")
    total = float(arr.sum())
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ProbabilityViolation(
            f"{context}: sum {total!r} deviates from 1 by more than {PROB_SUM_TOL}")
    return arr / total


@dataclass(eq=False)
class Detection:
    """One post-selection prediction: a box plus foreground class probabilities."""

    bbox: BoundingBox
    probs: np.ndarray  # (num_classes,), foreground only

    @property
    def confidence(self) -> float:
        return float(np.max(self.probs))

    @property
    def class_index(self) -> int:
        """0-based argmax class (class_id = class_index + 1)."""
        return int(np.argmax(self.probs))


@dataclass(eq=False)
class ProposalRecord:
    """One region proposal: pooled feature plus probabilities incl. background (last)."""

    feature: np.ndarray  # (feature_dim,)
    probs: np.ndarray    # (num_classes + 1,), background last


@dataclass(eq=False)
class ImageInference:
    image_id: str
    detections: list  # list[Detection]
    proposals: list   # list[ProposalRecord]; empty for detections-only passes


@dataclass(eq=False)
class PassDump:
    """One inference pass of one checkpoint over one domain."""

    domain: str      # DOMAIN_SOURCE | DOMAIN_TARGET
    pass_kind: str   # PASS_ORIGINAL | PASS_PERTURBED
    pass_index: int  # perturbation draw index; 0 for the original pass
    images: list     # list[ImageInference]

    def image_ids(self) -> list:
        return [img.image_id for img in self.images]

    def images_by_id(self) -> dict:
        return {img.image_id: img for img in self.images}


@dataclass(eq=False)
class CheckpointRecord:
    """All dumps needed to score one checkpoint."""

    checkpoint_id: str
    index_t: int
    target_original: PassDump
    target_perturbed: list            # list[PassDump], length >= 1
    source_proposals: PassDump

    @property
    def target_proposals(self) -> PassDump:
        # Target proposals ride along inside the original target pass.
        return self.target_original


@dataclass(frozen=True)
class GroundTruthObject:
    bbox: BoundingBox
    class_id: int  # 1..num_classes


@dataclass(eq=False)
class GroundTruthSet:
    """Per-image annotated objects; images absent from the map have none."""

    by_image: dict  # image_id -> list[GroundTruthObject]

    def objects_for(self, image_id: str) -> list:
        return self.by_image.get(image_id, [])

    def total_objects(self) -> int:
        return sum(len(v) for v in self.by_image.values())


@dataclass(eq=False)
class RunManifest:
    """A fully loaded run: checkpoints in training order plus metadata."""

    run_id: str
    num_classes: int
    feature_dim: int
    gamma: float
    class_names: list
    checkpoints: list  # list[CheckpointRecord], index_t strictly increasing
    ground_truth: Optional[GroundTruthSet] = None
    base_dir: Path = field(default_factory=Path)

    def checkpoint_ids(self) -> list:
        return [c.checkpoint_id for c in self.checkpoints]
