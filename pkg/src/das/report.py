"""Score report assembly and rendering.

A report is one versioned JSON document (``--format doc``) or an
aligned plain-text table (``--format table``). Floats are printed with
6 significant digits in both renderings; computation upstream stays at
full double precision.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

REPORT_SCHEMA_VERSION = 1
SIGNIFICANT_DIGITS = 6


def sig(value: Optional[float]) -> Optional[float]:
    """Round to 6 significant digits for presentation."""
    if value is None:
        return None
    if not math.isfinite(value):
        return value
    return float(f"{value:.{SIGNIFICANT_DIGITS}g}")


@dataclass(eq=False)
class ScoreReport:
    """Per-checkpoint score columns plus selection and correlation extras."""

    kind: str                  # "score" | "baselines" | "eval-map" | "corr"
    run_id: str
    checkpoint_ids: list
    index_ts: list
    columns: dict              # column name -> list of floats (or None entries)
    params: dict = field(default_factory=dict)   # lambda, conf_thresh, ...
    selected_checkpoint_id: Optional[str] = None
    pcc: Optional[dict] = None                   # metric -> float | None
    selection: Optional[dict] = None             # last/ours/oracle/improvement
    per_class_ap: Optional[dict] = None          # checkpoint_id -> {class_id: ap}
    notes: list = field(default_factory=list)


def to_document(report: ScoreReport) -> dict:
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": report.kind,
        "run_id": report.run_id,
        "params": report.params,
        "checkpoints": [
            {"checkpoint_id": cid, "index_t": it,
             **{name: sig(values[i]) for name, values in report.columns.items()}}
            for i, (cid, it) in enumerate(zip(report.checkpoint_ids,
                                              report.index_ts))
        ],
    }
    if report.selected_checkpoint_id is not None:
        doc["selected_checkpoint_id"] = report.selected_checkpoint_id
    if report.pcc is not None:
        doc["pcc"] = {name: sig(v) for name, v in report.pcc.items()}
    if report.selection is not None:
        doc["selection"] = report.selection
    if report.per_class_ap is not None:
        doc["per_class_ap"] = {
            cid: {str(k): sig(v) for k, v in aps.items()}
            for cid, aps in report.per_class_ap.items()
        }
    if report.notes:
        doc["notes"] = list(report.notes)
    return doc


def to_json(report: ScoreReport) -> str:
    return json.dumps(to_document(report), indent=2) + "\n"


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.{SIGNIFICANT_DIGITS}g}"
    return str(value)


def to_table(report: ScoreReport) -> str:
    """Aligned human-readable rendering of the same report."""
    headers = ["checkpoint", "index_t", *report.columns.keys()]
    rows = [
        [cid, str(it), *(_fmt(report.columns[name][i]) for name in report.columns)]
        for i, (cid, it) in enumerate(zip(report.checkpoint_ids, report.index_ts))
    ]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    lines = [
        f"# {report.kind} report for run {report.run_id!r}",
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    if report.selected_checkpoint_id is not None:
        lines.append(f"selected: {report.selected_checkpoint_id}")
    if report.selection is not None:
        s = report.selection
        lines.append("last {last_map}  ours {selected_map}  imp {improvement_str}  "
                     "oracle {oracle_map}".format(
                         last_map=_fmt(s["last_map"]),
                         selected_map=_fmt(s["selected_map"]),
                         improvement_str=s["improvement_str"],
                         oracle_map=_fmt(s["oracle_map"])))
    if report.pcc is not None:
        pcc = "  ".join(f"{name}={_fmt(sig(v))}" for name, v in report.pcc.items())
        lines.append(f"pcc vs map: {pcc}")
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def render(report: ScoreReport, fmt: str) -> str:
    if fmt == "doc":
        return to_json(report)
    if fmt == "table":
        return to_table(report)
    raise ValueError(f"unknown format {fmt!r}")
