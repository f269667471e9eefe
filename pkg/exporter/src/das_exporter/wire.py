"""Minimal writers for the das run format.

The adapter deliberately re-implements serialization instead of
importing the scoring package: the only contract between the two is the
on-disk format itself (validated end-to-end with ``das validate``).
"""

from __future__ import annotations

import json
from pathlib import Path

MANIFEST_SCHEMA_VERSION = 1


def write_image_records(path: Path, records) -> None:
    """One JSON object per line: {image_id, detections, proposals}."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def detection_entry(box, foreground_probs) -> dict:
    return {"bbox": [float(v) for v in box],
            "probs": [float(v) for v in foreground_probs]}


def proposal_entry(feature, probs_with_background) -> dict:
    return {"feature": [float(v) for v in feature],
            "probs": [float(v) for v in probs_with_background]}


def write_manifest(path: Path, *, run_id, num_classes, feature_dim, gamma,
                   class_names, checkpoint_entries) -> None:
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "run_id": run_id,
        "num_classes": num_classes,
        "feature_dim": feature_dim,
        "gamma": gamma,
        "class_names": list(class_names),
        "checkpoints": checkpoint_entries,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
