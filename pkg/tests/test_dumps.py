"""Wire format: domain types, dump round-trips, manifest parsing, validation."""

import json

import numpy as np
import pytest

from conftest import assert_passes_equal, make_detection, make_image, make_pass, make_proposal
from das import dumps
from das.errors import (
    BoxViolation,
    InconsistentDims,
    MalformedManifest,
    MalformedRecord,
    MissingFile,
    ProbabilityViolation,
)
from das.model import BoundingBox, as_probability_vector
from das.synth import SyntheticConfig, generate_run, write_run
from das.validation import SEV_FATAL, fatal_findings, validate_run


# --------------------------------------------------------------------------
# types
# --------------------------------------------------------------------------

def test_bounding_box_rejects_inverted():
    with pytest.raises(BoxViolation):
        BoundingBox(10, 10, 5, 20)
    with pytest.raises(BoxViolation):
        BoundingBox(0, 0, 1, float("nan"))
    BoundingBox(0, 0, 1, 1)  # valid


def test_probability_vector_accepts_and_renormalizes():
    v = as_probability_vector([0.5, 0.5], 2)
    np.testing.assert_allclose(v, [0.5, 0.5])
    # sum within 1e-4 is silently renormalized to 1 within 1e-9
    v = as_probability_vector([0.50004, 0.49998], 2)
    assert abs(v.sum() - 1.0) < 1e-9


def test_probability_vector_rejections():
    with pytest.raises(ProbabilityViolation):
        as_probability_vector([0.7, 0.4], 2)  # sum 1.1
    with pytest.raises(ProbabilityViolation):
        as_probability_vector([-0.1, 1.1], 2)
    with pytest.raises(MalformedRecord):
        as_probability_vector([1.0], 2)


def test_detection_confidence_is_max_prob():
    det = make_detection((0, 0, 1, 1), [0.2, 0.7, 0.1])
    assert det.confidence == pytest.approx(0.7)
    assert det.class_index == 1


# --------------------------------------------------------------------------
# pass dump round-trips
# --------------------------------------------------------------------------

def _sample_pass():
    return make_pass([
        make_image("img-a",
                   detections=[make_detection((0, 0, 10, 10), [0.7, 0.3]),
                               make_detection((5, 5, 20, 30), [0.25, 0.75])],
                   proposals=[make_proposal([1.0, -2.5, 3.25],
                                            [0.6, 0.2, 0.2])]),
        make_image("img-b",
                   detections=[make_detection((1, 2, 3, 4), [0.5, 0.5])],
                   proposals=[make_proposal([0.125, 7.0, -1.0],
                                            [0.1, 0.7, 0.2]),
                              make_proposal([9.0, 0.0, 0.5],
                                            [0.3, 0.3, 0.4])]),
    ])


def test_pass_dump_round_trip_inline(tmp_path):
    dump = _sample_pass()
    path = tmp_path / "pass.jsonl"
    dumps.write_pass_dump(dump, path)
    back = dumps.parse_pass_dump(path, num_classes=2, feature_dim=3,
                                 domain="target", pass_kind="original")
    assert_passes_equal(dump, back)


def test_pass_dump_round_trip_sidecar(tmp_path):
    dump = _sample_pass()
    # float32-representable features round-trip exactly through the sidecar
    path = tmp_path / "pass.jsonl"
    dumps.write_pass_dump(dump, path, feature_sidecar=True)
    assert dumps.sidecar_path(path).is_file()
    text = path.read_text()
    assert "feature_ref" in text and '"feature"' not in text
    back = dumps.parse_pass_dump(path, num_classes=2, feature_dim=3,
                                 domain="target", pass_kind="original")
    assert_passes_equal(dump, back, rel=0)


def test_parse_rejects_bad_probability_sum(tmp_path):
    path = tmp_path / "p.jsonl"
    rec = {"image_id": "x", "detections": [
        {"bbox": [0, 0, 1, 1], "probs": [0.7, 0.4]}], "proposals": []}
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(ProbabilityViolation):
        dumps.parse_pass_dump(path, num_classes=2, feature_dim=3,
                              domain="target", pass_kind="original")


def test_parse_rejects_bad_box(tmp_path):
    path = tmp_path / "p.jsonl"
    rec = {"image_id": "x", "detections": [
        {"bbox": [10, 10, 5, 20], "probs": [0.5, 0.5]}], "proposals": []}
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(BoxViolation):
        dumps.parse_pass_dump(path, num_classes=2, feature_dim=3,
                              domain="target", pass_kind="original")


def test_parse_rejects_bad_json_and_duplicates(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text("not json\n")
    with pytest.raises(MalformedRecord):
        dumps.parse_pass_dump(path, num_classes=2, feature_dim=3,
                              domain="target", pass_kind="original")
    rec = json.dumps({"image_id": "x", "detections": [], "proposals": []})
    path.write_text(rec + "\n" + rec + "\n")
    with pytest.raises(MalformedRecord, match="duplicate"):
        dumps.parse_pass_dump(path, num_classes=2, feature_dim=3,
                              domain="target", pass_kind="original")


def test_parse_rejects_wrong_feature_dim(tmp_path):
    path = tmp_path / "p.jsonl"
    rec = {"image_id": "x", "detections": [],
           "proposals": [{"feature": [1.0, 2.0], "probs": [0.5, 0.3, 0.2]}]}
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(InconsistentDims):
        dumps.parse_pass_dump(path, num_classes=2, feature_dim=128,
                              domain="target", pass_kind="original")


def test_ground_truth_round_trip(tmp_path):
    from das.model import GroundTruthObject, GroundTruthSet
    gt = GroundTruthSet(by_image={
        "a": [GroundTruthObject(BoundingBox(0, 0, 10, 10), 1)],
        "b": [GroundTruthObject(BoundingBox(3, 4, 5, 6), 2),
              GroundTruthObject(BoundingBox(0, 0, 1, 1), 1)],
    })
    path = tmp_path / "gt.jsonl"
    dumps.write_ground_truth(gt, path)
    back = dumps.parse_ground_truth(path, num_classes=2)
    assert back.total_objects() == 3
    assert [o.class_id for o in back.objects_for("b")] == [2, 1]
    with pytest.raises(MalformedRecord):
        dumps.parse_ground_truth(path, num_classes=1)  # class_id 2 out of range


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------

def test_manifest_round_trip_via_synthetic_run(tmp_path):
    config = SyntheticConfig(images_per_domain=6, trajectory_length=3, seed=5)
    run = generate_run(config)
    manifest_path = write_run(run, tmp_path / "run")
    manifest = dumps.parse_manifest(manifest_path)
    assert manifest.run_id == config.run_id
    assert len(manifest.checkpoints) == 3
    assert manifest.checkpoint_ids() == ["ckpt-000", "ckpt-001", "ckpt-002"]
    assert manifest.ground_truth is not None
    for orig, back in zip(run.manifest.checkpoints, manifest.checkpoints):
        assert_passes_equal(orig.target_original, back.target_original)
        assert_passes_equal(orig.source_proposals, back.source_proposals)
        assert len(back.target_perturbed) == 1


def test_manifest_class_name_count_mismatch(tmp_path):
    manifest_path = write_run(
        generate_run(SyntheticConfig(images_per_domain=4, trajectory_length=2)),
        tmp_path / "run")
    doc = json.loads(manifest_path.read_text())
    doc["num_classes"] = 8  # disagrees with the 5 class_names
    manifest_path.write_text(json.dumps(doc))
    with pytest.raises(MalformedManifest):
        dumps.parse_manifest(manifest_path)


def test_manifest_missing_file(tmp_path):
    manifest_path = write_run(
        generate_run(SyntheticConfig(images_per_domain=4, trajectory_length=2)),
        tmp_path / "run")
    (tmp_path / "run" / "ckpt-001" / "source_proposals.jsonl").unlink()
    with pytest.raises(MissingFile):
        dumps.parse_manifest(manifest_path)


def test_manifest_inconsistent_dims(tmp_path):
    manifest_path = write_run(
        generate_run(SyntheticConfig(images_per_domain=4, trajectory_length=2,
                                     feature_dim=8)),
        tmp_path / "run")
    doc = json.loads(manifest_path.read_text())
    doc["feature_dim"] = 128  # dumps carry 8-dim features
    manifest_path.write_text(json.dumps(doc))
    with pytest.raises(InconsistentDims):
        dumps.parse_manifest(manifest_path)


def test_manifest_index_t_must_increase(tmp_path):
    manifest_path = write_run(
        generate_run(SyntheticConfig(images_per_domain=4, trajectory_length=2)),
        tmp_path / "run")
    doc = json.loads(manifest_path.read_text())
    doc["checkpoints"][1]["index_t"] = 0
    manifest_path.write_text(json.dumps(doc))
    with pytest.raises(MalformedManifest, match="strictly increasing"):
        dumps.parse_manifest(manifest_path)


# --------------------------------------------------------------------------
# validate_run
# --------------------------------------------------------------------------

def test_validate_clean_run(tiny_run):
    assert validate_run(tiny_run.manifest) == []


def test_validate_missing_perturbed_pass(tiny_run):
    manifest = tiny_run.manifest
    broken = manifest.checkpoints[0]
    saved = broken.target_perturbed
    broken.target_perturbed = []
    try:
        findings = validate_run(manifest)
    finally:
        broken.target_perturbed = saved
    fatal = fatal_findings(findings)
    assert any(f.code == "missing-perturbed-pass" and f.severity == SEV_FATAL
               and "missing perturbed pass" in f.message for f in fatal)


def test_validate_image_mismatch(tiny_run):
    manifest = tiny_run.manifest
    pert = manifest.checkpoints[0].target_perturbed[0]
    removed = pert.images.pop()
    try:
        findings = validate_run(manifest)
    finally:
        pert.images.append(removed)
    assert any(f.code == "pass-image-mismatch" and "pass image mismatch" in f.message
               for f in fatal_findings(findings))
