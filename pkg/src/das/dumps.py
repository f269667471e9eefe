"""Wire format for manifests, pass dumps and ground truth.

Everything is line-delimited JSON so dumps stay human-inspectable at
desk scale:

* manifest: a single JSON document (see :func:`parse_manifest`),
* pass dump: one JSON object per line, one image per line,
* ground truth: one JSON object per line, one image per line.

Proposal features may be stored inline (``"feature": [...]``) or in a
flat binary sidecar of little-endian float32 values next to the dump
(same path with a ``.f32`` suffix), referenced per proposal as
``"feature_ref": {"offset": <element offset>, "count": <elements>}``.
The sidecar keeps realistic-scale dumps compact; inline floats
round-trip exactly through decimal serialization.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from das.errors import (
    InconsistentDims,
    MalformedManifest,
    MalformedRecord,
    MissingFile,
)
from das.model import (
    BoundingBox,
    CheckpointRecord,
    Detection,
    GroundTruthObject,
    GroundTruthSet,
    ImageInference,
    PassDump,
    ProposalRecord,
    RunManifest,
    as_probability_vector,
)

MANIFEST_SCHEMA_VERSION = 1


def sidecar_path(dump_path) -> Path:
    """Feature sidecar convention: the dump path with a ``.f32`` suffix."""
    return Path(dump_path).with_suffix(".f32")


# --------------------------------------------------------------------------
# pass dumps
# --------------------------------------------------------------------------

def _parse_detection(obj, num_classes: int, where: str) -> Detection:
    if not isinstance(obj, dict) or "bbox" not in obj or "probs" not in obj:
        raise MalformedRecord(f"{where}: detection needs 'bbox' and 'probs'")
    bbox = BoundingBox.from_seq(obj["bbox"])
    probs = as_probability_vector(obj["probs"], num_classes, f"{where} detection probs")
    return Detection(bbox=bbox, probs=probs)


def _parse_proposal(obj, num_classes: int, feature_dim: int,
                    sidecar: Optional[np.ndarray], where: str) -> ProposalRecord:
    if not isinstance(obj, dict) or "probs" not in obj:
        raise MalformedRecord(f"{where}: proposal needs 'probs'")
    probs = as_probability_vector(obj["probs"], num_classes + 1,
                                  f"{where} proposal probs")
    if "feature" in obj:
        feature = np.asarray(obj["feature"], dtype=np.float64)
    elif "feature_ref" in obj:
        ref = obj["feature_ref"]
        try:
            offset, count = int(ref["offset"]), int(ref["count"])
        except (TypeError, KeyError) as exc:
            raise MalformedRecord(f"{where}: bad feature_ref {ref!r}") from exc
        if sidecar is None:
            raise MissingFile(f"{where}: feature_ref used but no .f32 sidecar found")
        if offset < 0 or count < 0 or offset + count > sidecar.size:
            raise MalformedRecord(
                f"{where}: feature_ref [{offset}:{offset + count}] outside sidecar "
                f"of {sidecar.size} values")
        feature = sidecar[offset:offset + count].astype(np.float64)
    else:
        raise MalformedRecord(f"{where}: proposal needs 'feature' or 'feature_ref'")
    if feature.ndim != 1 or feature.size != feature_dim:
        raise InconsistentDims(
            f"{where}: feature has {feature.size} values, manifest declares "
            f"{feature_dim}")
    if not np.all(np.isfinite(feature)):
        raise MalformedRecord(f"{where}: non-finite feature entry")
    return ProposalRecord(feature=feature, probs=probs)


def parse_pass_dump(path, *, num_classes: int, feature_dim: int,
                    domain: str, pass_kind: str, pass_index: int = 0) -> PassDump:
    """Parse one line-delimited pass dump.

    Raises MalformedRecord / ProbabilityViolation / BoxViolation /
    InconsistentDims on the first offending line.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    side = sidecar_path(path)
    sidecar = None
    if side.is_file():
        sidecar = np.fromfile(side, dtype="<f4")

    images = []
    seen = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path.name}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"{where}: invalid JSON ({exc})") from exc
            if not isinstance(obj, dict) or "image_id" not in obj:
                raise MalformedRecord(f"{where}: record needs 'image_id'")
            image_id = str(obj["image_id"])
            if not image_id:
                raise MalformedRecord(f"{where}: empty image_id")
            if image_id in seen:
                raise MalformedRecord(f"{where}: duplicate image_id {image_id!r}")
            seen.add(image_id)
            detections = [
                _parse_detection(d, num_classes, where)
                for d in obj.get("detections", [])
            ]
            proposals = [
                _parse_proposal(p, num_classes, feature_dim, sidecar, where)
                for p in obj.get("proposals", [])
            ]
            images.append(ImageInference(image_id=image_id,
                                         detections=detections,
                                         proposals=proposals))
    return PassDump(domain=domain, pass_kind=pass_kind,
                    pass_index=pass_index, images=images)


def write_pass_dump(dump: PassDump, path, *, feature_sidecar: bool = False) -> None:
    """Write a pass dump; optionally move features into a float32 sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    side_values = [] if feature_sidecar else None
    offset = 0
    with path.open("w", encoding="utf-8") as fh:
        for img in dump.images:
            rec = {"image_id": img.image_id}
            rec["detections"] = [
                {"bbox": [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2],
                 "probs": [float(v) for v in d.probs]}
                for d in img.detections
            ]
            proposals = []
            for p in img.proposals:
                entry = {"probs": [float(v) for v in p.probs]}
                if feature_sidecar:
                    count = int(p.feature.size)
                    entry["feature_ref"] = {"offset": offset, "count": count}
                    side_values.append(np.asarray(p.feature, dtype="<f4"))
                    offset += count
                else:
                    entry["feature"] = [float(v) for v in p.feature]
                proposals.append(entry)
            rec["proposals"] = proposals
            fh.write(json.dumps(rec) + "\n")
    if feature_sidecar:
        blob = (np.concatenate(side_values) if side_values
                else np.empty(0, dtype="<f4"))
        blob.astype("<f4").tofile(sidecar_path(path))


# --------------------------------------------------------------------------
# ground truth
# --------------------------------------------------------------------------

def parse_ground_truth(path, num_classes: int) -> GroundTruthSet:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    by_image = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path.name}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"{where}: invalid JSON ({exc})") from exc
            if not isinstance(obj, dict) or "image_id" not in obj:
                raise MalformedRecord(f"{where}: record needs 'image_id'")
            image_id = str(obj["image_id"])
            if image_id in by_image:
                raise MalformedRecord(f"{where}: duplicate image_id {image_id!r}")
            objects = []
            for o in obj.get("objects", []):
                class_id = int(o["class_id"])
                if not 1 <= class_id <= num_classes:
                    raise MalformedRecord(
                        f"{where}: class_id {class_id} outside 1..{num_classes}")
                objects.append(GroundTruthObject(
                    bbox=BoundingBox.from_seq(o["bbox"]), class_id=class_id))
            by_image[image_id] = objects
    return GroundTruthSet(by_image=by_image)


def write_ground_truth(gt: GroundTruthSet, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for image_id in gt.by_image:
            objects = [
                {"bbox": [o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2],
                 "class_id": o.class_id}
                for o in gt.by_image[image_id]
            ]
            fh.write(json.dumps({"image_id": image_id, "objects": objects}) + "\n")


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------

def _require(doc: dict, key: str, kind, what: str = "manifest"):
    if key not in doc:
        raise MalformedManifest(f"{what}: missing field {key!r}")
    value = doc[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise MalformedManifest(
            f"{what}: field {key!r} must be {kind.__name__}, got {type(value).__name__}")
    return value


def parse_manifest(path) -> RunManifest:
    """Load a run manifest and every dump it references.

    All cross-references are resolved eagerly, so a returned manifest is
    fully materialized and internally consistent.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    base = path.parent
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedManifest(f"{path.name}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise MalformedManifest(f"{path.name}: top level must be an object")

    version = doc.get("schema_version", MANIFEST_SCHEMA_VERSION)
    if version != MANIFEST_SCHEMA_VERSION:
        raise MalformedManifest(f"unsupported schema_version {version!r}")
    run_id = _require(doc, "run_id", str)
    num_classes = _require(doc, "num_classes", int)
    feature_dim = _require(doc, "feature_dim", int)
    gamma = _require(doc, "gamma", float)
    class_names = _require(doc, "class_names", list)
    entries = _require(doc, "checkpoints", list)
    if num_classes < 1 or feature_dim < 1:
        raise MalformedManifest("num_classes and feature_dim must be >= 1")
    if gamma <= 0:
        raise MalformedManifest(f"gamma must be > 0, got {gamma}")
    if len(class_names) != num_classes:
        raise MalformedManifest(
            f"num_classes is {num_classes} but {len(class_names)} class_names given")
    if not entries:
        raise MalformedManifest("manifest lists no checkpoints")

    def resolve(rel, what):
        p = base / rel
        if not p.is_file():
            raise MissingFile(f"{what}: {p}")
        return p

    checkpoints = []
    prev_index = None
    for i, entry in enumerate(entries):
        what = f"checkpoints[{i}]"
        if not isinstance(entry, dict):
            raise MalformedManifest(f"{what}: must be an object")
        ckpt_id = _require(entry, "checkpoint_id", str, what)
        index_t = _require(entry, "index_t", int, what)
        if prev_index is not None and index_t <= prev_index:
            raise MalformedManifest(
                f"{what}: index_t {index_t} not strictly increasing")
        prev_index = index_t
        perturbed_rels = _require(entry, "target_perturbed", list, what)
        target_original = parse_pass_dump(
            resolve(_require(entry, "target_original", str, what), what),
            num_classes=num_classes, feature_dim=feature_dim,
            domain="target", pass_kind="original")
        target_perturbed = [
            parse_pass_dump(resolve(rel, what),
                            num_classes=num_classes, feature_dim=feature_dim,
                            domain="target", pass_kind="perturbed", pass_index=j)
            for j, rel in enumerate(perturbed_rels)
        ]
        source_proposals = parse_pass_dump(
            resolve(_require(entry, "source_proposals", str, what), what),
            num_classes=num_classes, feature_dim=feature_dim,
            domain="source", pass_kind="original")
        checkpoints.append(CheckpointRecord(
            checkpoint_id=ckpt_id, index_t=index_t,
            target_original=target_original,
            target_perturbed=target_perturbed,
            source_proposals=source_proposals))

    ground_truth = None
    if doc.get("ground_truth"):
        ground_truth = parse_ground_truth(
            resolve(doc["ground_truth"], "ground_truth"), num_classes)

    return RunManifest(run_id=run_id, num_classes=num_classes,
                       feature_dim=feature_dim, gamma=gamma,
                       class_names=list(class_names), checkpoints=checkpoints,
                       ground_truth=ground_truth, base_dir=base)


def write_manifest(path, *, run_id: str, num_classes: int, feature_dim: int,
                   gamma: float, class_names, checkpoint_entries,
                   ground_truth_rel: Optional[str] = None) -> None:
    """Write a manifest document; paths in ``checkpoint_entries`` are relative."""
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "run_id": run_id,
        "num_classes": num_classes,
        "feature_dim": feature_dim,
        "gamma": gamma,
        "class_names": list(class_names),
        "checkpoints": checkpoint_entries,
    }
    if ground_truth_rel is not None:
        doc["ground_truth"] = ground_truth_rel
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
