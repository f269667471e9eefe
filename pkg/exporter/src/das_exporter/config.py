"""Export configuration: which checkpoints, which images, how to perturb."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path


class ExportError(Exception):
    """Raised for unloadable checkpoints, bad config or dimension mismatches."""


@dataclass
class ExportConfig:
    """Inputs of one export run.

    Image entries are ``.npy`` (H, W, 3 float) or ``.pt`` tensor files;
    the file stem becomes the image id. Paths are interpreted relative
    to ``base_dir`` (the config file's directory when loaded from disk).
    """

    checkpoints: list                 # ordered state-dict paths
    source_images: list
    target_images: list
    num_classes: int
    feature_dim: int
    run_id: str = "export"
    gamma: float = 1.0                # perturbation radius
    perturbation_seed: int = 0
    proposal_cap: int = 64            # top proposals kept per image
    confidence_floor: float = 0.05    # minimum confidence for dumped detections
    grid: int = 4                     # proposal grid of the reference detector
    channels: int = 16                # backbone width of the reference detector
    class_names: list = field(default_factory=list)
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.gamma <= 0:
            raise ExportError(f"gamma must be > 0, got {self.gamma}")
        if not self.checkpoints:
            raise ExportError("no checkpoints listed")
        if not self.source_images or not self.target_images:
            raise ExportError("both source and target image lists are required")
        if self.num_classes < 1 or self.feature_dim < 1:
            raise ExportError("num_classes and feature_dim must be >= 1")
        if not 0.0 <= self.confidence_floor < 1.0:
            raise ExportError("confidence_floor must be in [0, 1)")
        if self.proposal_cap < 1:
            raise ExportError("proposal_cap must be >= 1")
        if not self.class_names:
            self.class_names = [f"class_{i:02d}"
                                for i in range(1, self.num_classes + 1)]
        if len(self.class_names) != self.num_classes:
            raise ExportError("class_names length must equal num_classes")

    def resolve(self, rel) -> Path:
        return (self.base_dir / rel).resolve()

    @classmethod
    def from_file(cls, path) -> "ExportConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ExportError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(doc) - known
        if unknown:
            raise ExportError(f"unknown config fields: {sorted(unknown)}")
        return cls(base_dir=path.parent, **doc)
