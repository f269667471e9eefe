"""Command-line surface: score, baselines, eval-map, corr, synth, validate.

Exit codes are a stable contract: 0 success, 2 validation failure,
3 scoring error, 4 missing ground truth, 5 I/O failure. Per-checkpoint
scoring parallelizes across worker threads; ``DAS_THREADS`` caps the
worker count (0 = auto). Reports are deterministic given identical
inputs and seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from das.dumps import parse_manifest
from das.errors import (
    BoxViolation,
    DasError,
    InconsistentDims,
    MalformedManifest,
    MalformedRecord,
    MissingFile,
    NoGroundTruth,
    ProbabilityViolation,
)
from das.evaluation import map50, selection_report
from das.matching import DEFAULT_CONF_THRESH, fis
from das.prototypes import pdr, soft_prototypes
from das.report import ScoreReport, render, sig
from das.scores import (
    DEFAULT_LAMBDA,
    baseline_atc,
    baseline_es,
    baseline_fd,
    baseline_ps,
    das,
    fd_mode_forced_diagonal,
    min_max_normalize,
    select_best,
)
from das.synth import SyntheticConfig, generate_trajectory
from das.validation import (
    BASELINE_SCOPES,
    EVAL_SCOPES,
    SCOPE_PROPOSALS,
    SCORE_SCOPES,
    fatal_findings,
    validate_run,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SCORING = 3
EXIT_NO_GT = 4
EXIT_IO = 5

DEFAULT_ATC_THRESHOLDS = (0.3, 0.4, 0.95)


def _worker_count(n_items: int) -> int:
    raw = os.environ.get("DAS_THREADS", "0").strip() or "0"
    try:
        cap = int(raw)
    except ValueError:
        cap = 0
    if cap <= 0:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_items))


def _map_ordered(fn, items):
    """Apply fn per checkpoint, possibly in parallel, preserving order."""
    items = list(items)
    workers = _worker_count(len(items))
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _emit(args, text: str) -> None:
    if getattr(args, "out", None):
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _print_findings(findings) -> None:
    for finding in findings:
        print(finding.render(), file=sys.stderr)


def _gate(findings, scopes):
    fatal = fatal_findings(findings, scopes)
    if fatal:
        _print_findings(fatal)
    return fatal


def _warning_notes(findings) -> list:
    return [f.render() for f in findings if not f.is_fatal()]


def _normalization_notes(columns: dict, n: int) -> list:
    notes = []
    if n == 1:
        notes.append("single checkpoint: min-max normalization degenerates to 0.5")
    else:
        for name, values in columns.items():
            if name in ("fis", "pdr") and len(set(values)) == 1:
                notes.append(f"{name} constant across checkpoints; normalized to 0.5")
    return notes


# --------------------------------------------------------------------------
# per-checkpoint scoring helpers
# --------------------------------------------------------------------------

def _fis_pdr(ckpt, manifest, conf_thresh):
    flatness = fis(ckpt, conf_thresh)
    proto_src = soft_prototypes(ckpt.source_proposals, manifest.num_classes,
                                manifest.feature_dim)
    proto_tgt = soft_prototypes(ckpt.target_proposals, manifest.num_classes,
                                manifest.feature_dim)
    return flatness, pdr(proto_src, proto_tgt)


def _baseline_row(ckpt, conf_thresh, atc_thresholds, fd_mode, include_fd):
    row = {
        "ps": baseline_ps(ckpt.target_original, conf_thresh),
        "es": baseline_es(ckpt.target_original, conf_thresh),
    }
    for th in atc_thresholds:
        row[f"atc@{th:g}"] = baseline_atc(ckpt.target_original, th, conf_thresh)
    if include_fd:
        row["fd"] = baseline_fd(ckpt.source_proposals, ckpt.target_proposals,
                                fd_mode)
    return row


def _score_columns(manifest, conf_thresh, lam):
    rows = _map_ordered(lambda c: _fis_pdr(c, manifest, conf_thresh),
                        manifest.checkpoints)
    fis_raw = [r[0] for r in rows]
    pdr_raw = [r[1] for r in rows]
    das_values = das(fis_raw, pdr_raw, lam)
    columns = {
        "fis": fis_raw,
        "pdr": pdr_raw,
        "fis_norm": min_max_normalize(fis_raw),
        "pdr_norm": min_max_normalize(pdr_raw),
        "das": das_values,
    }
    selected = select_best(das_values, fis_raw, manifest.checkpoint_ids())
    return columns, selected


def _baseline_columns(manifest, findings, conf_thresh, atc_thresholds, fd_mode):
    notes = []
    include_fd = not fatal_findings(findings, {SCOPE_PROPOSALS})
    if not include_fd:
        notes.append("fd skipped: run carries no usable proposals")
        print("warning: fd skipped (no usable proposals)", file=sys.stderr)
    elif fd_mode == "full" and any(
            fd_mode_forced_diagonal(c.source_proposals, c.target_proposals)
            for c in manifest.checkpoints):
        notes.append("fd: diagonal covariance forced (too few features for "
                     "full mode)")
    rows = _map_ordered(
        lambda c: _baseline_row(c, conf_thresh, atc_thresholds, fd_mode,
                                include_fd),
        manifest.checkpoints)
    columns = {name: [row[name] for row in rows] for name in rows[0]}
    return columns, notes


def _map_column(manifest):
    if manifest.ground_truth is None:
        raise NoGroundTruth("manifest declares no ground truth")
    results = _map_ordered(
        lambda c: map50(c.target_original, manifest.ground_truth,
                        manifest.num_classes),
        manifest.checkpoints)
    per_class = {c.checkpoint_id: r.per_class
                 for c, r in zip(manifest.checkpoints, results)}
    return [r.map50 for r in results], per_class


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_score(args) -> int:
    manifest = parse_manifest(args.manifest)
    findings = validate_run(manifest)
    if _gate(findings, SCORE_SCOPES):
        return EXIT_VALIDATION
    columns, selected = _score_columns(manifest, args.conf_thresh, args.lam)
    notes = _warning_notes(findings)
    notes += _normalization_notes(columns, len(manifest.checkpoints))
    rep = ScoreReport(
        kind="score", run_id=manifest.run_id,
        checkpoint_ids=manifest.checkpoint_ids(),
        index_ts=[c.index_t for c in manifest.checkpoints],
        columns=columns,
        params={"lambda": args.lam, "conf_thresh": args.conf_thresh,
                "gamma": manifest.gamma},
        selected_checkpoint_id=selected, notes=notes)
    _emit(args, render(rep, args.format))
    return EXIT_OK


def cmd_baselines(args) -> int:
    manifest = parse_manifest(args.manifest)
    findings = validate_run(manifest)
    if _gate(findings, BASELINE_SCOPES):
        return EXIT_VALIDATION
    columns, notes = _baseline_columns(manifest, findings, args.conf_thresh,
                                       args.atc_thresholds, args.fd_mode)
    notes += _warning_notes(findings)
    notes += _normalization_notes({}, len(manifest.checkpoints))
    rep = ScoreReport(
        kind="baselines", run_id=manifest.run_id,
        checkpoint_ids=manifest.checkpoint_ids(),
        index_ts=[c.index_t for c in manifest.checkpoints],
        columns=columns,
        params={"conf_thresh": args.conf_thresh,
                "atc_thresholds": list(args.atc_thresholds),
                "fd_mode": args.fd_mode},
        notes=notes)
    _emit(args, render(rep, args.format))
    return EXIT_OK


def cmd_eval_map(args) -> int:
    manifest = parse_manifest(args.manifest)
    findings = validate_run(manifest)
    if _gate(findings, EVAL_SCOPES):
        return EXIT_VALIDATION
    maps, per_class = _map_column(manifest)
    rep = ScoreReport(
        kind="eval-map", run_id=manifest.run_id,
        checkpoint_ids=manifest.checkpoint_ids(),
        index_ts=[c.index_t for c in manifest.checkpoints],
        columns={"map": maps},
        params={},
        per_class_ap=per_class,
        notes=_warning_notes(findings))
    _emit(args, render(rep, args.format))
    return EXIT_OK


def cmd_corr(args) -> int:
    manifest = parse_manifest(args.manifest)
    if manifest.ground_truth is None:
        raise NoGroundTruth("manifest declares no ground truth")
    findings = validate_run(manifest)
    if _gate(findings, SCORE_SCOPES | BASELINE_SCOPES | EVAL_SCOPES):
        return EXIT_VALIDATION
    columns, selected = _score_columns(manifest, args.conf_thresh, args.lam)
    baseline_cols, notes = _baseline_columns(manifest, findings,
                                             args.conf_thresh,
                                             args.atc_thresholds, args.fd_mode)
    columns.update(baseline_cols)
    maps, per_class = _map_column(manifest)
    columns["map"] = maps

    metric_series = {name: values for name, values in columns.items()
                     if name not in ("map", "fis_norm", "pdr_norm")}
    sel = selection_report(manifest.checkpoint_ids(), selected, maps,
                           metric_series)
    rep = ScoreReport(
        kind="corr", run_id=manifest.run_id,
        checkpoint_ids=manifest.checkpoint_ids(),
        index_ts=[c.index_t for c in manifest.checkpoints],
        columns=columns,
        params={"lambda": args.lam, "conf_thresh": args.conf_thresh,
                "atc_thresholds": list(args.atc_thresholds),
                "fd_mode": args.fd_mode},
        selected_checkpoint_id=selected,
        pcc={name: (r.pcc if r is not None else None)
             for name, r in sel.pcc_by_metric.items()},
        selection={"last_map": sig(sel.last_map),
                   "selected_map": sig(sel.selected_map),
                   "oracle_map": sig(sel.oracle_map),
                   "improvement": sig(sel.improvement),
                   "improvement_str": sel.improvement_str},
        per_class_ap=per_class,
        notes=notes + sel.notes + _warning_notes(findings)
        + _normalization_notes(columns, len(manifest.checkpoints)))
    _emit(args, render(rep, args.format))
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        config = (SyntheticConfig.from_file(args.config) if args.config
                  else SyntheticConfig())
        if args.seed is not None:
            config = replace(config, seed=args.seed)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: bad synthetic config: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    manifest_path = generate_trajectory(config, args.out)
    print(manifest_path)
    return EXIT_OK


def cmd_validate(args) -> int:
    manifest = parse_manifest(args.manifest)
    findings = validate_run(manifest)
    for finding in findings:
        print(finding.render())
    if fatal_findings(findings):
        return EXIT_VALIDATION
    print(f"ok: run {manifest.run_id!r} with {len(manifest.checkpoints)} "
          f"checkpoint(s) is scoreable")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _csv_floats(text: str) -> tuple:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad float list {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("threshold list is empty")
    return values


def _conf_thresh(text: str) -> float:
    value = float(text)
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError("conf-thresh must be in [0, 1)")
    return value


def _nonneg(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError("lambda must be >= 0")
    return value


def _add_output_args(p):
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--format", choices=("doc", "table"), default="doc",
                   help="doc = JSON document, table = aligned text")


def _add_scoring_args(p, with_lambda=True, with_atc=False):
    p.add_argument("--manifest", required=True, help="run manifest path")
    p.add_argument("--conf-thresh", type=_conf_thresh,
                   default=DEFAULT_CONF_THRESH,
                   help="detection confidence floor (default %(default)s)")
    if with_lambda:
        p.add_argument("--lambda", dest="lam", type=_nonneg,
                       default=DEFAULT_LAMBDA,
                       help="weight of the prototype ratio term "
                            "(default %(default)s)")
    if with_atc:
        p.add_argument("--atc-thresholds", type=_csv_floats,
                       default=DEFAULT_ATC_THRESHOLDS,
                       help="comma-separated confidence thresholds "
                            "(default 0.3,0.4,0.95)")
        p.add_argument("--fd-mode", choices=("full", "diagonal"),
                       default="full", help="feature covariance estimator")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="das",
        description="Rank detection checkpoints from inference dumps "
                    "without target labels.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="flatness + prototype-ratio ranking")
    _add_scoring_args(p)
    _add_output_args(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("baselines", help="label-free baseline scores")
    _add_scoring_args(p, with_lambda=False, with_atc=True)
    _add_output_args(p)
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("eval-map", help="supervised mAP@0.5 oracle")
    p.add_argument("--manifest", required=True, help="run manifest path")
    _add_output_args(p)
    p.set_defaults(func=cmd_eval_map)

    p = sub.add_parser("corr", help="correlate every metric with mAP")
    _add_scoring_args(p, with_atc=True)
    _add_output_args(p)
    p.set_defaults(func=cmd_corr)

    p = sub.add_parser("synth", help="generate a synthetic run directory")
    p.add_argument("--config", help="synthetic config JSON (defaults if omitted)")
    p.add_argument("--out", required=True, help="output run directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="check a run without scoring it")
    p.add_argument("--manifest", required=True, help="run manifest path")
    p.set_defaults(func=cmd_validate)

    return parser


_PARSE_ERRORS = (MalformedManifest, MissingFile, InconsistentDims,
                 MalformedRecord, ProbabilityViolation, BoxViolation)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NoGroundTruth as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_GT
    except _PARSE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCORING
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
