"""Synthetic detection runs: a controllable toy detector family.

Generates manifest + dumps + ground truth for end-to-end testing
without any deep-learning stack. Scenes (latent object features, boxes
and all unit noise draws) are fixed per run; a checkpoint trajectory
varies only the detector parameters, so checkpoints are directly
comparable just like real training snapshots scored on a fixed image
set.

Two independent dials shape a trajectory:

* drift: class weights slide toward a fixed misaligned matrix, which
  degrades classification (and with it mAP and the prototype ratio);
* sharpness: the logit gain, which amplifies output change under the
  fixed-radius weight perturbation (and with it lowers the flatness
  index).

Every stochastic draw comes from a counter-based generator keyed by
(seed, purpose, indices), so generation is reproducible and
schedule-independent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from das.dumps import write_ground_truth, write_manifest, write_pass_dump
from das.errors import DimMismatch, EmptyParameters
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
)

# Purpose tags for the keyed counter-based RNG streams.
_PURPOSES = {
    "class-directions": 0,
    "domain-shift": 1,
    "scene": 2,
    "misaligned-weights": 3,
    "perturbation": 4,
}
_DOMAIN_INDEX = {"source": 0, "target": 1}


def keyed_rng(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Philox stream keyed by (seed, purpose, indices); draws never collide."""
    seq = np.random.SeedSequence(entropy=int(seed),
                                 spawn_key=(_PURPOSES[purpose], *indices))
    return np.random.Generator(np.random.Philox(seq))


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class SyntheticConfig:
    """Knobs of the synthetic scenario and checkpoint trajectory."""

    run_id: str = "synth"
    num_classes: int = 5
    feature_dim: int = 32
    images_per_domain: int = 40
    objects_per_image: tuple = (1, 4)       # inclusive range
    class_separation: float = 4.0           # scale of class mean placement
    domain_shift: float = 1.0               # source->target mean offset length
    feature_noise: float = 0.5
    box_noise: float = 2.0                  # pixels
    trajectory_length: int = 6
    drift_start: float = 0.0                # weight drift toward misalignment
    drift_end: float = 0.8
    drift_values: Optional[list] = None     # explicit per-step override
    sharpness_start: float = 2.0            # logit gain
    sharpness_end: float = 8.0
    sharpness_values: Optional[list] = None
    gamma: float = 1.0                      # perturbation radius
    perturbed_draws: int = 1
    proposals_per_object: int = 2
    image_size: tuple = (640, 480)
    box_extent: tuple = (30.0, 120.0)       # object side length range
    feature_storage: str = "inline"         # "inline" | "sidecar"
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.feature_dim < 1:
            raise ValueError("num_classes and feature_dim must be >= 1")
        if self.trajectory_length < 1:
            raise ValueError("trajectory_length must be >= 1")
        if self.images_per_domain < 1:
            raise ValueError("images_per_domain must be >= 1")
        lo, hi = self.objects_per_image
        if lo < 1 or hi < lo:
            raise ValueError(f"bad objects_per_image range {self.objects_per_image}")
        for name in ("class_separation", "sharpness_start", "sharpness_end"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("feature_noise", "box_noise", "domain_shift"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.perturbed_draws < 1:
            raise ValueError("perturbed_draws must be >= 1")
        if self.proposals_per_object < 1:
            raise ValueError("proposals_per_object must be >= 1")
        if self.feature_storage not in ("inline", "sidecar"):
            raise ValueError(f"bad feature_storage {self.feature_storage!r}")

    def drift_schedule(self) -> list:
        if self.drift_values is not None:
            values = [float(v) for v in self.drift_values]
        else:
            values = np.linspace(self.drift_start, self.drift_end,
                                 self.trajectory_length).tolist()
        if len(values) != self.trajectory_length:
            raise ValueError("drift_values length must equal trajectory_length")
        return values

    def sharpness_schedule(self) -> list:
        if self.sharpness_values is not None:
            values = [float(v) for v in self.sharpness_values]
        else:
            values = np.geomspace(self.sharpness_start, self.sharpness_end,
                                  self.trajectory_length).tolist()
        if len(values) != self.trajectory_length:
            raise ValueError("sharpness_values length must equal trajectory_length")
        if any(v <= 0 for v in values):
            raise ValueError("sharpness must stay > 0")
        return values

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(doc)
        for name in ("objects_per_image", "image_size", "box_extent"):
            if name in kwargs and isinstance(kwargs[name], list):
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "SyntheticConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# detector parameters
# --------------------------------------------------------------------------

@dataclass(eq=False)
class ToyDetectorParams:
    """Linear softmax head over latent features plus a box jitter gain.

    The flattened parameter vector covers class_weights, bias and
    box_gain; sharpness is an architectural dial, not a weight.
    """

    class_weights: np.ndarray  # (num_classes + 1, feature_dim), background last
    bias: np.ndarray           # (num_classes + 1,)
    box_gain: float
    sharpness: float

    def __post_init__(self):
        if self.sharpness <= 0:
            raise ValueError("sharpness must be > 0")
        if self.class_weights.shape[0] != self.bias.shape[0]:
            raise DimMismatch("class_weights and bias disagree on class count")

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.class_weights.ravel(), self.bias,
                               [self.box_gain]])

    @classmethod
    def from_flat(cls, theta: np.ndarray, num_classes: int, feature_dim: int,
                  sharpness: float) -> "ToyDetectorParams":
        rows = num_classes + 1
        expected = rows * feature_dim + rows + 1
        if theta.size != expected:
            raise DimMismatch(f"theta has {theta.size} values, expected {expected}")
        w = theta[:rows * feature_dim].reshape(rows, feature_dim).copy()
        b = theta[rows * feature_dim:rows * feature_dim + rows].copy()
        return cls(class_weights=w, bias=b, box_gain=float(theta[-1]),
                   sharpness=sharpness)


def perturb_parameters(theta, gamma: float, seed) -> np.ndarray:
    """Add a random direction of exact Euclidean length ``gamma``.

    ``seed`` may be an integer or a prepared Generator; a fixed seed
    reproduces the same direction. ``gamma=0`` (tests only) returns the
    input unchanged.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size == 0:
        raise EmptyParameters("cannot perturb an empty parameter vector")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if gamma == 0:
        return theta.copy()
    rng = seed if isinstance(seed, np.random.Generator) \
        else keyed_rng(seed, "perturbation")
    delta = rng.standard_normal(theta.size)
    norm = float(np.linalg.norm(delta))
    while norm == 0.0:  # astronomically unlikely; keeps the contract total
        delta = rng.standard_normal(theta.size)
        norm = float(np.linalg.norm(delta))
    return theta + delta * (gamma / norm)


def _class_directions(seed: int, num_classes: int, feature_dim: int) -> np.ndarray:
    """Unit class directions, orthonormal whenever feature_dim allows."""
    rng = keyed_rng(seed, "class-directions")
    raw = rng.standard_normal((feature_dim, num_classes))
    if num_classes <= feature_dim:
        q, _ = np.linalg.qr(raw)
        dirs = q[:, :num_classes].T
    else:
        dirs = raw.T / np.linalg.norm(raw.T, axis=1, keepdims=True)
    return dirs


def aligned_params(config: SyntheticConfig, sharpness: float) -> ToyDetectorParams:
    """Weights matched to the class directions: confident, correct predictions."""
    dirs = _class_directions(config.seed, config.num_classes, config.feature_dim)
    w = np.zeros((config.num_classes + 1, config.feature_dim))
    # Unit response at the class mean: row_k . (s * dir_k) == 1.
    w[:config.num_classes] = dirs / config.class_separation
    return ToyDetectorParams(class_weights=w,
                             bias=np.zeros(config.num_classes + 1),
                             box_gain=1.0, sharpness=sharpness)


def _misaligned_weights(config: SyntheticConfig) -> np.ndarray:
    """Fixed random weight rows of the same magnitude as the aligned ones."""
    rng = keyed_rng(config.seed, "misaligned-weights")
    raw = rng.standard_normal((config.num_classes, config.feature_dim))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    return raw / config.class_separation


def trajectory_params(config: SyntheticConfig) -> list:
    """Per-checkpoint detector parameters following both schedules."""
    base = aligned_params(config, 1.0)
    bad_rows = _misaligned_weights(config)
    out = []
    for alpha, kappa in zip(config.drift_schedule(), config.sharpness_schedule()):
        w = base.class_weights.copy()
        w[:config.num_classes] = ((1.0 - alpha) * base.class_weights[:config.num_classes]
                                  + alpha * bad_rows)
        out.append(ToyDetectorParams(class_weights=w, bias=base.bias.copy(),
                                     box_gain=base.box_gain, sharpness=kappa))
    return out


# --------------------------------------------------------------------------
# scenes
# --------------------------------------------------------------------------

@dataclass(eq=False)
class SyntheticObject:
    class_id: int              # 1..num_classes
    bbox: BoundingBox          # ground-truth box
    latent: np.ndarray         # (feature_dim,)
    det_feature_unit: np.ndarray   # (feature_dim,) unit noise for the detection feature
    det_box_unit: np.ndarray       # (4,) unit noise for the detection box
    proposal_units: np.ndarray     # (proposals_per_object, feature_dim)


@dataclass(eq=False)
class SyntheticScene:
    image_id: str
    objects: list


@dataclass(eq=False)
class Scenario:
    scenes: dict          # domain -> list[SyntheticScene]
    ground_truth: GroundTruthSet
    class_means: dict     # domain -> (num_classes, feature_dim)


def _domain_means(config: SyntheticConfig) -> dict:
    dirs = _class_directions(config.seed, config.num_classes, config.feature_dim)
    source = config.class_separation * dirs
    shift_rng = keyed_rng(config.seed, "domain-shift")
    direction = shift_rng.standard_normal(config.feature_dim)
    direction /= np.linalg.norm(direction)
    return {"source": source, "target": source + config.domain_shift * direction}


def _make_scene(config: SyntheticConfig, domain: str, index: int,
                means: np.ndarray) -> SyntheticScene:
    rng = keyed_rng(config.seed, "scene", _DOMAIN_INDEX[domain], index)
    lo, hi = config.objects_per_image
    n_obj = int(rng.integers(lo, hi + 1))
    width, height = config.image_size
    ext_lo, ext_hi = config.box_extent
    objects = []
    for _ in range(n_obj):
        class_id = int(rng.integers(1, config.num_classes + 1))
        w = float(rng.uniform(ext_lo, ext_hi))
        h = float(rng.uniform(ext_lo, ext_hi))
        x1 = float(rng.uniform(0.0, width - w))
        y1 = float(rng.uniform(0.0, height - h))
        latent = means[class_id - 1] + config.feature_noise * \
            rng.standard_normal(config.feature_dim)
        objects.append(SyntheticObject(
            class_id=class_id,
            bbox=BoundingBox(x1, y1, x1 + w, y1 + h),
            latent=latent,
            det_feature_unit=rng.standard_normal(config.feature_dim),
            det_box_unit=rng.standard_normal(4),
            proposal_units=rng.standard_normal(
                (config.proposals_per_object, config.feature_dim)),
        ))
    return SyntheticScene(image_id=f"{domain[:3]}{index:05d}", objects=objects)


def generate_scenario(config: SyntheticConfig) -> Scenario:
    """Fixed scenes for both domains plus target-domain ground truth."""
    means = _domain_means(config)
    scenes = {
        domain: [_make_scene(config, domain, i, means[domain])
                 for i in range(config.images_per_domain)]
        for domain in ("source", "target")
    }
    gt = GroundTruthSet(by_image={
        scene.image_id: [GroundTruthObject(bbox=o.bbox, class_id=o.class_id)
                         for o in scene.objects]
        for scene in scenes["target"]
    })
    return Scenario(scenes=scenes, ground_truth=gt, class_means=means)


# --------------------------------------------------------------------------
# inference
# --------------------------------------------------------------------------

def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _sane_box(coords: np.ndarray) -> BoundingBox:
    x1, y1, x2, y2 = (float(v) for v in coords)
    if x2 < x1:
        x1, x2 = x2, x1
    if y2 < y1:
        y1, y2 = y2, y1
    if x2 <= x1:
        x2 = x1 + 0.1
    if y2 <= y1:
        y2 = y1 + 0.1
    return BoundingBox(x1, y1, x2, y2)


def run_toy_detector(params: ToyDetectorParams, scenes, config: SyntheticConfig,
                     *, domain: str, pass_kind: str, pass_index: int = 0,
                     include_detections: bool = True,
                     include_proposals: bool = True) -> PassDump:
    """Deterministic inference of the toy detector over fixed scenes.

    Per object: one detection (ground-truth box jittered by
    ``box_gain * box_noise``, foreground slice of the softmax renormalized)
    and ``proposals_per_object`` proposals (latent plus feature noise,
    full softmax incl. background). All randomness lives in the scenes,
    so identical parameters reproduce identical dumps.
    """
    if params.class_weights.shape[1] != config.feature_dim:
        raise DimMismatch(
            f"weights expect dim {params.class_weights.shape[1]}, "
            f"config says {config.feature_dim}")
    objs = [(scene, o) for scene in scenes for o in scene.objects]
    images = {scene.image_id: ImageInference(image_id=scene.image_id,
                                             detections=[], proposals=[])
              for scene in scenes}
    if objs:
        wt = params.class_weights.T
        kappa = params.sharpness
        if include_detections:
            feats = np.stack([o.latent + config.feature_noise * o.det_feature_unit
                              for _, o in objs])
            probs_full = _softmax(kappa * (feats @ wt + params.bias))
            fg = probs_full[:, :config.num_classes]
            fg = fg / fg.sum(axis=1, keepdims=True)
            jitter = params.box_gain * config.box_noise * \
                np.stack([o.det_box_unit for _, o in objs])
            boxes = np.stack([o.bbox.as_array() for _, o in objs]) + jitter
            for (scene, _), probs, box in zip(objs, fg, boxes):
                images[scene.image_id].detections.append(
                    Detection(bbox=_sane_box(box), probs=probs))
        if include_proposals:
            feats = np.concatenate([
                o.latent[None, :] + config.feature_noise * o.proposal_units
                for _, o in objs])
            probs_full = _softmax(kappa * (feats @ wt + params.bias))
            # float32 rounding keeps inline and sidecar storage equivalent
            feats = feats.astype(np.float32).astype(np.float64)
            row = 0
            for scene, o in objs:
                for _ in range(config.proposals_per_object):
                    images[scene.image_id].proposals.append(ProposalRecord(
                        feature=feats[row], probs=probs_full[row]))
                    row += 1
    return PassDump(domain=domain, pass_kind=pass_kind, pass_index=pass_index,
                    images=[images[s.image_id] for s in scenes])


# --------------------------------------------------------------------------
# trajectory
# --------------------------------------------------------------------------

@dataclass(eq=False)
class SyntheticRun:
    manifest: RunManifest
    params: list       # list[ToyDetectorParams], aligned with checkpoints
    scenario: Scenario
    config: SyntheticConfig


def generate_run(config: SyntheticConfig) -> SyntheticRun:
    """Build the whole run in memory: scenario, trajectory, all passes."""
    scenario = generate_scenario(config)
    params_per_step = trajectory_params(config)
    checkpoints = []
    for t, params in enumerate(params_per_step):
        target_original = run_toy_detector(
            params, scenario.scenes["target"], config,
            domain="target", pass_kind="original")
        theta = params.flatten()
        perturbed = []
        for draw in range(config.perturbed_draws):
            rng = keyed_rng(config.seed, "perturbation", t, draw)
            shifted = ToyDetectorParams.from_flat(
                perturb_parameters(theta, config.gamma, rng),
                config.num_classes, config.feature_dim, params.sharpness)
            perturbed.append(run_toy_detector(
                shifted, scenario.scenes["target"], config,
                domain="target", pass_kind="perturbed", pass_index=draw,
                include_proposals=False))
        source_proposals = run_toy_detector(
            params, scenario.scenes["source"], config,
            domain="source", pass_kind="original", include_detections=False)
        checkpoints.append(CheckpointRecord(
            checkpoint_id=f"ckpt-{t:03d}", index_t=t,
            target_original=target_original,
            target_perturbed=perturbed,
            source_proposals=source_proposals))
    manifest = RunManifest(
        run_id=config.run_id,
        num_classes=config.num_classes,
        feature_dim=config.feature_dim,
        gamma=config.gamma,
        class_names=[f"class_{i:02d}" for i in range(1, config.num_classes + 1)],
        checkpoints=checkpoints,
        ground_truth=scenario.ground_truth)
    return SyntheticRun(manifest=manifest, params=params_per_step,
                        scenario=scenario, config=config)


def write_run(run: SyntheticRun, out_dir) -> Path:
    """Serialize a run in the wire format; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sidecar = run.config.feature_storage == "sidecar"
    entries = []
    for ckpt in run.manifest.checkpoints:
        sub = ckpt.checkpoint_id
        (out / sub).mkdir(exist_ok=True)
        entry = {"checkpoint_id": ckpt.checkpoint_id, "index_t": ckpt.index_t}
        rel = f"{sub}/target_original.jsonl"
        write_pass_dump(ckpt.target_original, out / rel, feature_sidecar=sidecar)
        entry["target_original"] = rel
        entry["target_perturbed"] = []
        for p in ckpt.target_perturbed:
            rel = f"{sub}/target_perturbed_{p.pass_index:03d}.jsonl"
            write_pass_dump(p, out / rel, feature_sidecar=sidecar)
            entry["target_perturbed"].append(rel)
        rel = f"{sub}/source_proposals.jsonl"
        write_pass_dump(ckpt.source_proposals, out / rel, feature_sidecar=sidecar)
        entry["source_proposals"] = rel
        entries.append(entry)
    write_ground_truth(run.manifest.ground_truth, out / "ground_truth.jsonl")
    (out / "synth_config.json").write_text(
        json.dumps(run.config.to_dict(), indent=2) + "\n", encoding="utf-8")
    write_manifest(out / "manifest.json",
                   run_id=run.manifest.run_id,
                   num_classes=run.manifest.num_classes,
                   feature_dim=run.manifest.feature_dim,
                   gamma=run.manifest.gamma,
                   class_names=run.manifest.class_names,
                   checkpoint_entries=entries,
                   ground_truth_rel="ground_truth.jsonl")
    return out / "manifest.json"


def generate_trajectory(config: SyntheticConfig, out_dir) -> Path:
    """Generate and serialize a complete synthetic run directory."""
    return write_run(generate_run(config), out_dir)
