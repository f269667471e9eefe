"""Export checkpoints of the host detector as a das run directory.

For every checkpoint: load its weights, flatten all trainable
parameters, add one Gaussian direction normalized to Euclidean length
``gamma`` (global normalization over the whole vector, backbone and
heads alike), run inference over the target images with both parameter
sets and over the source images with the original set, and serialize
the passes in the das wire format. The perturbation vector, its norm
and a checksum are stored next to the dumps so the contract
``|delta| = gamma`` stays auditable after the fact.

Only trainable parameters are perturbed; buffers (if the host model had
any) would keep their original values.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from das_exporter.config import ExportConfig, ExportError
from das_exporter.detector import build_detector


def load_image(path: Path) -> torch.Tensor:
    """Load an image file as a (3, H, W) float32 tensor in [0, 1]."""
    if path.suffix == ".npy":
        arr = np.load(path)
        tensor = torch.from_numpy(np.ascontiguousarray(arr)).float()
    elif path.suffix == ".pt":
        tensor = torch.load(path, weights_only=True).float()
    else:
        raise ExportError(f"unsupported image format: {path}")
    if tensor.ndim != 3:
        raise ExportError(f"{path}: expected 3 dims, got {tensor.ndim}")
    if tensor.shape[-1] == 3 and tensor.shape[0] != 3:
        tensor = tensor.permute(2, 0, 1)
    if tensor.shape[0] != 3:
        raise ExportError(f"{path}: expected 3 channels, got {tensor.shape[0]}")
    return tensor


def perturbation_direction(num_params: int, gamma: float,
                           seed: int) -> torch.Tensor:
    """Gaussian direction over the flattened parameters, scaled to |delta| = gamma."""
    generator = torch.Generator().manual_seed(seed)
    delta = torch.randn(num_params, generator=generator)
    return delta * (gamma / delta.norm())


def _trainable(model) -> list:
    return [p for p in model.parameters() if p.requires_grad]


def _dump_pass(model, images, cfg: ExportConfig, *, with_detections: bool,
               with_proposals: bool) -> list:
    from das_exporter.wire import detection_entry, proposal_entry

    records = []
    for image_id, tensor in images:
        boxes, probs, features = model(tensor)
        record = {"image_id": image_id, "detections": [], "proposals": []}
        foreground = probs[:, :cfg.num_classes]
        fg_norm = foreground / foreground.sum(dim=1, keepdim=True)
        confidence = fg_norm.max(dim=1).values
        if with_detections:
            for idx in torch.nonzero(confidence >= cfg.confidence_floor).flatten():
                record["detections"].append(detection_entry(
                    boxes[idx].tolist(), fg_norm[idx].tolist()))
        if with_proposals:
            keep = torch.argsort(-foreground.max(dim=1).values,
                                 stable=True)[:cfg.proposal_cap]
            for idx in keep.sort().values:
                record["proposals"].append(proposal_entry(
                    features[idx].tolist(), probs[idx].tolist()))
        records.append(record)
    return records


def _load_images(cfg: ExportConfig, rels) -> list:
    images = []
    seen = set()
    for rel in rels:
        path = cfg.resolve(rel)
        if not path.is_file():
            raise ExportError(f"image file missing: {path}")
        image_id = path.stem
        if image_id in seen:
            raise ExportError(f"duplicate image id {image_id!r} in list")
        seen.add(image_id)
        images.append((image_id, load_image(path)))
    return images


def _load_checkpoint(model, path: Path) -> None:
    if not path.is_file():
        raise ExportError(f"checkpoint missing: {path}")
    try:
        state = torch.load(path, weights_only=True)
        model.load_state_dict(state)
    except Exception as exc:
        raise ExportError(f"cannot load checkpoint {path}: {exc}") from exc


def export_run(cfg: ExportConfig, out_dir) -> Path:
    """Write the complete run directory; returns the manifest path."""
    from das_exporter.wire import write_image_records, write_manifest

    model = build_detector(cfg.num_classes, cfg.feature_dim,
                           cfg.channels, cfg.grid)
    if model.cls_head.out_features != cfg.num_classes + 1 \
            or model.feature_head.out_features != cfg.feature_dim:
        raise ExportError("detector heads disagree with declared dims")

    source_images = _load_images(cfg, cfg.source_images)
    target_images = _load_images(cfg, cfg.target_images)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    entries = []
    perturbation_log = []
    with torch.no_grad():
        for index_t, ckpt_rel in enumerate(cfg.checkpoints):
            _load_checkpoint(model, cfg.resolve(ckpt_rel))
            params = _trainable(model)
            theta = parameters_to_vector(params).detach().clone()
            delta = perturbation_direction(
                theta.numel(), cfg.gamma,
                cfg.perturbation_seed * 1_000_003 + index_t)

            ckpt_id = f"ckpt-{index_t:03d}"
            sub = out / ckpt_id
            write_image_records(sub / "target_original.jsonl", _dump_pass(
                model, target_images, cfg,
                with_detections=True, with_proposals=True))
            write_image_records(sub / "source_proposals.jsonl", _dump_pass(
                model, source_images, cfg,
                with_detections=False, with_proposals=True))

            vector_to_parameters(theta + delta, params)
            write_image_records(sub / "target_perturbed_000.jsonl", _dump_pass(
                model, target_images, cfg,
                with_detections=True, with_proposals=False))
            vector_to_parameters(theta, params)  # restore for the next pass

            delta_np = delta.numpy()
            delta_path = sub / "perturbation.npy"
            np.save(delta_path, delta_np)
            perturbation_log.append({
                "checkpoint_id": ckpt_id,
                "delta_file": f"{ckpt_id}/perturbation.npy",
                "norm": float(np.linalg.norm(delta_np)),
                "sha256": hashlib.sha256(delta_np.tobytes()).hexdigest(),
                "parameters": int(theta.numel()),
            })
            entries.append({
                "checkpoint_id": ckpt_id,
                "index_t": index_t,
                "target_original": f"{ckpt_id}/target_original.jsonl",
                "target_perturbed": [f"{ckpt_id}/target_perturbed_000.jsonl"],
                "source_proposals": f"{ckpt_id}/source_proposals.jsonl",
            })

    (out / "perturbations.json").write_text(
        json.dumps({"gamma": cfg.gamma, "seed": cfg.perturbation_seed,
                    "checkpoints": perturbation_log}, indent=2) + "\n",
        encoding="utf-8")
    manifest_path = out / "manifest.json"
    write_manifest(manifest_path, run_id=cfg.run_id,
                   num_classes=cfg.num_classes, feature_dim=cfg.feature_dim,
                   gamma=cfg.gamma, class_names=cfg.class_names,
                   checkpoint_entries=entries)
    return manifest_path
