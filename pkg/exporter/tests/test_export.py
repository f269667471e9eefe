"""Exporter contract: valid runs, auditable perturbations, determinism.

The scoring engine is exercised only through its external surface (the
``das`` CLI on PATH and the run files on disk), never imported.
"""

import json
import subprocess
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from das_exporter.config import ExportConfig, ExportError
from das_exporter.detector import build_detector, grid_boxes
from das_exporter.export import export_run, load_image, perturbation_direction

GAMMA_REL_TOL = 1e-4


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL", flush=True)
        raise
    print(f"[ACCEPTANCE] {name}: PASS", flush=True)


def _das(*args):
    return subprocess.run(["das", *args], capture_output=True, text=True)


@pytest.fixture(scope="session")
def exported(export_workspace, tmp_path_factory):
    _, config_path, _ = export_workspace
    out = tmp_path_factory.mktemp("exported-run")
    manifest = export_run(ExportConfig.from_file(config_path), out)
    return out, manifest


# --------------------------------------------------------------------------
# acceptance: the exporter contract
# --------------------------------------------------------------------------

def test_exported_run_validates(exported):
    with criterion("exporter contract: `das validate` exit 0"):
        out, manifest = exported
        proc = _das("validate", "--manifest", str(manifest))
        assert proc.returncode == 0, proc.stdout + proc.stderr
        assert "scoreable" in proc.stdout


def test_stored_perturbation_norm_matches_gamma(exported):
    with criterion("exporter contract: stored |delta| = gamma to 1e-4 relative"):
        out, _ = exported
        log = json.loads((out / "perturbations.json").read_text())
        assert log["gamma"] == 1.0
        for entry in log["checkpoints"]:
            delta = np.load(out / entry["delta_file"])
            norm = float(np.linalg.norm(delta))
            assert norm == pytest.approx(log["gamma"], rel=GAMMA_REL_TOL)
            assert entry["norm"] == pytest.approx(norm, rel=1e-12)


# --------------------------------------------------------------------------
# determinism
# --------------------------------------------------------------------------

def test_re_export_is_bit_identical(export_workspace, tmp_path):
    _, config_path, _ = export_workspace
    cfg = ExportConfig.from_file(config_path)
    m1 = export_run(cfg, tmp_path / "one")
    m2 = export_run(cfg, tmp_path / "two")
    files = sorted(p.relative_to(tmp_path / "one")
                   for p in (tmp_path / "one").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "one" / rel).read_bytes() == \
            (tmp_path / "two" / rel).read_bytes(), rel
    assert m1.read_bytes() == m2.read_bytes()


def test_perturbation_direction_keyed_by_seed():
    a = perturbation_direction(1000, 1.0, seed=5)
    b = perturbation_direction(1000, 1.0, seed=5)
    c = perturbation_direction(1000, 1.0, seed=6)
    assert torch.equal(a, b)
    assert not torch.equal(a, c)
    assert float(a.norm()) == pytest.approx(1.0, rel=GAMMA_REL_TOL)


def test_checksum_tracks_direction(exported, export_workspace, tmp_path):
    # same seed -> same stored checksum on re-export
    out, _ = exported
    _, config_path, _ = export_workspace
    export_run(ExportConfig.from_file(config_path), tmp_path / "again")
    first = json.loads((out / "perturbations.json").read_text())
    second = json.loads((tmp_path / "again" / "perturbations.json").read_text())
    assert [e["sha256"] for e in first["checkpoints"]] == \
        [e["sha256"] for e in second["checkpoints"]]


# --------------------------------------------------------------------------
# the exported run is actually scoreable end to end
# --------------------------------------------------------------------------

def test_exported_run_scores_via_cli(exported, tmp_path):
    _, manifest = exported
    report_path = tmp_path / "score.json"
    proc = _das("score", "--manifest", str(manifest),
                "--conf-thresh", "0.2", "--out", str(report_path))
    assert proc.returncode == 0, proc.stdout + proc.stderr
    doc = json.loads(report_path.read_text())
    assert len(doc["checkpoints"]) == 3
    assert doc["selected_checkpoint_id"].startswith("ckpt-")


# --------------------------------------------------------------------------
# host-model and config error paths
# --------------------------------------------------------------------------

def test_dimension_mismatch_is_rejected(export_workspace, tmp_path):
    _, config_path, doc = export_workspace
    bad = dict(doc, feature_dim=doc["feature_dim"] + 1)
    bad_path = config_path.parent / "bad_dims.json"
    bad_path.write_text(json.dumps(bad))
    with pytest.raises(ExportError):
        export_run(ExportConfig.from_file(bad_path), tmp_path / "out")


def test_unloadable_checkpoint_is_rejected(export_workspace, tmp_path):
    root, config_path, doc = export_workspace
    (root / "garbage.pt").write_bytes(b"not a checkpoint")
    bad = dict(doc, checkpoints=["garbage.pt"])
    bad_path = root / "bad_ckpt.json"
    bad_path.write_text(json.dumps(bad))
    with pytest.raises(ExportError, match="cannot load checkpoint"):
        export_run(ExportConfig.from_file(bad_path), tmp_path / "out")


def test_config_validation(tmp_path):
    with pytest.raises(ExportError, match="gamma"):
        ExportConfig(checkpoints=["c.pt"], source_images=["s.npy"],
                     target_images=["t.npy"], num_classes=2, feature_dim=4,
                     gamma=0.0)
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"nope": 1}))
    with pytest.raises(ExportError, match="unknown config fields"):
        ExportConfig.from_file(bad)


# --------------------------------------------------------------------------
# reference detector sanity
# --------------------------------------------------------------------------

def test_detector_outputs_are_well_formed():
    torch.manual_seed(0)
    model = build_detector(num_classes=3, feature_dim=12, channels=8, grid=3)
    image = torch.rand(3, 24, 24)
    boxes, probs, features = model(image)
    assert boxes.shape == (9, 4) and probs.shape == (9, 4)
    assert features.shape == (9, 12)
    assert torch.all(boxes[:, 2] > boxes[:, 0])
    assert torch.all(boxes[:, 3] > boxes[:, 1])
    torch.testing.assert_close(probs.sum(dim=1), torch.ones(9))


def test_grid_boxes_tile_the_image():
    boxes = grid_boxes(30, 60, 2)
    assert boxes.shape == (4, 4)
    assert boxes[0].tolist() == [0.0, 0.0, 30.0, 15.0]
    assert boxes[-1].tolist() == [30.0, 15.0, 60.0, 30.0]


def test_load_image_formats(tmp_path):
    arr = np.random.default_rng(1).uniform(0, 1, (10, 12, 3)).astype(np.float32)
    npy = tmp_path / "a.npy"
    np.save(npy, arr)
    tensor = load_image(npy)
    assert tensor.shape == (3, 10, 12)
    pt = tmp_path / "b.pt"
    torch.save(torch.rand(3, 8, 8), pt)
    assert load_image(pt).shape == (3, 8, 8)
    with pytest.raises(ExportError):
        load_image(tmp_path / "c.txt")
