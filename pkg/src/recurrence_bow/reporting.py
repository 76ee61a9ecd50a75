"""JSON and CSV writers for experiment reports."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .pipeline import STAGES, ExperimentReport

SWEEP_COLUMNS = ("dataset", "status", "m", "tau", "epsilon", "relative_epsilon", "M", "selected_M",
                 "selected_C", "error_rate", "accuracy", "train_error_rate", "seed") + \
    tuple(f"t_{s}" for s in STAGES) + ("error",)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_row(r: ExperimentReport) -> dict:
    cfg_emb = r.config.get("embedding", {}) if r.config else {}
    row = {
        "dataset": r.dataset, "status": r.status,
        "m": r.cell.get("m", cfg_emb.get("m")), "tau": r.cell.get("tau", cfg_emb.get("tau")),
        "epsilon": r.cell.get("epsilon", cfg_emb.get("epsilon")),
        "relative_epsilon": r.cell.get("relative_epsilon", cfg_emb.get("relative_epsilon")),
        "M": r.cell.get("M"), "selected_M": r.selected_M, "selected_C": r.selected_C,
        "error_rate": r.error_rate, "accuracy": r.accuracy, "train_error_rate": r.train_error_rate,
        "seed": r.seed, "error": r.error,
    }
    for s in STAGES:
        row[f"t_{s}"] = r.stage_seconds.get(s)
    return row


def write_reports_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in reports:
            row = report_row(r)
            w.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])


def read_reports_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(obj, path) -> None:
    if isinstance(obj, ExperimentReport):
        obj = obj.to_dict()
    elif isinstance(obj, list):
        obj = [o.to_dict() if isinstance(o, ExperimentReport) else o for o in obj]
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
