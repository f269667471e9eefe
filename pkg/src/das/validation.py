"""Structural validation of a loaded run.

``validate_run`` never raises: it returns findings, each tagged with a
severity and the scoring surface it affects, so commands that do not
need a given surface (e.g. baselines without proposals) can keep going
while checkpoint scoring refuses to run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from das.model import CheckpointRecord, PassDump, RunManifest

SEV_FATAL = "fatal"
SEV_WARNING = "warning"

# Scoring surfaces a finding can invalidate.
SCOPE_RUN = "run"
SCOPE_MATCHING = "matching"      # flatness scoring (original vs perturbed)
SCOPE_DETECTIONS = "detections"  # detection-pooled baselines
SCOPE_PROPOSALS = "proposals"    # prototype / feature-distance scoring
SCOPE_GROUND_TRUTH = "ground-truth"

SCORE_SCOPES = frozenset({SCOPE_RUN, SCOPE_MATCHING, SCOPE_PROPOSALS})
BASELINE_SCOPES = frozenset({SCOPE_RUN, SCOPE_DETECTIONS})
EVAL_SCOPES = frozenset({SCOPE_RUN, SCOPE_GROUND_TRUTH})


@dataclass(frozen=True)
class Finding:
    severity: str
    scope: str
    code: str
    message: str
    checkpoint_id: Optional[str] = None

    def is_fatal(self) -> bool:
        return self.severity == SEV_FATAL

    def render(self) -> str:
        prefix = f"[{self.severity}] {self.code}"
        if self.checkpoint_id is not None:
            prefix += f" ({self.checkpoint_id})"
        return f"{prefix}: {self.message}"


def _has_any_proposals(dump: PassDump) -> bool:
    return any(img.proposals for img in dump.images)


def _check_checkpoint(ckpt: CheckpointRecord, findings: list) -> None:
    cid = ckpt.checkpoint_id

    if not ckpt.target_perturbed:
        findings.append(Finding(SEV_FATAL, SCOPE_MATCHING, "missing-perturbed-pass",
                                "missing perturbed pass", cid))
    orig_ids = set(ckpt.target_original.image_ids())
    if not orig_ids:
        findings.append(Finding(SEV_FATAL, SCOPE_RUN, "empty-pass",
                                "target original pass has no images", cid))
    for p in ckpt.target_perturbed:
        pert_ids = set(p.image_ids())
        if pert_ids != orig_ids:
            missing = sorted(orig_ids - pert_ids)[:3]
            extra = sorted(pert_ids - orig_ids)[:3]
            findings.append(Finding(
                SEV_FATAL, SCOPE_MATCHING, "pass-image-mismatch",
                f"pass image mismatch between original and perturbed[{p.pass_index}]"
                f" (missing={missing}, extra={extra})", cid))

    # Flatness needs at least one image with detections on both sides.
    by_id = ckpt.target_original.images_by_id()
    for p in ckpt.target_perturbed:
        matchable = any(
            img.detections and by_id.get(img.image_id) is not None
            and by_id[img.image_id].detections
            for img in p.images
        )
        if not matchable:
            findings.append(Finding(
                SEV_FATAL, SCOPE_MATCHING, "no-matchable-images",
                f"no image has detections in both original and "
                f"perturbed[{p.pass_index}] passes", cid))

    if not any(img.detections for img in ckpt.target_original.images):
        findings.append(Finding(SEV_FATAL, SCOPE_DETECTIONS, "no-detections",
                                "target original pass has no detections", cid))

    for label, dump in (("source_proposals", ckpt.source_proposals),
                        ("target_original", ckpt.target_original)):
        if not dump.images:
            findings.append(Finding(SEV_FATAL, SCOPE_PROPOSALS, "empty-pass",
                                    f"{label} pass has no images", cid))
            continue
        if not _has_any_proposals(dump):
            findings.append(Finding(SEV_FATAL, SCOPE_PROPOSALS, "no-proposals",
                                    f"{label} pass carries no proposals", cid))
        else:
            empty = [img.image_id for img in dump.images if not img.proposals]
            if empty:
                findings.append(Finding(
                    SEV_WARNING, SCOPE_PROPOSALS, "image-without-proposals",
                    f"{label}: {len(empty)} image(s) without proposals "
                    f"(e.g. {empty[:3]})", cid))


def validate_run(manifest: RunManifest) -> list:
    """Exhaustively check pairing invariants; empty result means fully scoreable."""
    findings = []

    indices = [c.index_t for c in manifest.checkpoints]
    if any(b <= a for a, b in zip(indices, indices[1:])):
        findings.append(Finding(SEV_FATAL, SCOPE_RUN, "index-not-increasing",
                                f"index_t sequence {indices} is not strictly increasing"))

    for ckpt in manifest.checkpoints:
        _check_checkpoint(ckpt, findings)

    if manifest.ground_truth is not None and manifest.checkpoints:
        covered = set(manifest.ground_truth.by_image)
        target_ids = set(manifest.checkpoints[0].target_original.image_ids())
        uncovered = sorted(target_ids - covered)
        if uncovered:
            findings.append(Finding(
                SEV_WARNING, SCOPE_GROUND_TRUTH, "gt-missing-images",
                f"{len(uncovered)} target image(s) absent from ground truth "
                f"(treated as having no objects, e.g. {uncovered[:3]})"))

    return findings


def fatal_findings(findings, scopes=None) -> list:
    """Fatal findings, optionally restricted to the scopes a command needs."""
    return [f for f in findings
            if f.is_fatal() and (scopes is None or f.scope in scopes)]
