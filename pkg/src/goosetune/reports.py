"""Plot-data emission from persisted run artifacts.

Each report kind produces one CSV of plot-ready columns; rendering itself is
out of scope. Reports are pure functions of the artifact, so re-emitting is
byte-reproducible.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import yaml

REPORT_KINDS = ("fig5a", "fig5b", "fig6", "fig8")


def load_records(artifact_dir, name="records.csv") -> list[dict]:
    path = Path(artifact_dir) / name
    if not path.exists():
        raise FileNotFoundError(f"artifact file missing: {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_artifact_config(artifact_dir) -> dict:
    return yaml.safe_load((Path(artifact_dir) / "config.yaml").read_text())


def _write(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def emit_report(artifact_dir, kind: str, out_path=None) -> Path:
    """Write one plot-data CSV derived from a persisted artifact."""
    artifact_dir = Path(artifact_dir)
    if not artifact_dir.exists():
        raise FileNotFoundError(f"artifact directory missing: {artifact_dir}")
    if kind not in REPORT_KINDS:
        raise ValueError(f"unknown report kind {kind!r}; expected one of {REPORT_KINDS}")
    out = Path(out_path) if out_path else artifact_dir / f"{kind}.csv"

    if kind == "fig5a":
        # rolling predicted optimum with confidence band
        path = artifact_dir / "tracker.csv"
        if not path.exists():
            raise FileNotFoundError(
                "artifact has no optimum tracker; run the scenario with track_optimum"
            )
        with open(path, newline="") as fh:
            rows = [
                [r["iteration"], r["predicted_optimum"], r["lcb"], r["ucb"]]
                for r in csv.DictReader(fh)
            ]
        return _write(out, ["iteration", "predicted_optimum", "lcb", "ucb"], rows)

    if kind == "fig5b":
        cfg = load_artifact_config(artifact_dir)
        spec = cfg.get("parallel") or {}
        rate = spec.get("seconds_per_op") or 2e-8
        rows = []
        for r in load_records(artifact_dir):
            ops = int(r["compute_ops"])
            rows.append([r["iteration"], ops, repr(ops * rate)])
        return _write(out, ["iteration", "compute_ops", "compute_seconds"], rows)

    if kind == "fig6":
        # cost/constraint vs stepsize per method at the light payload
        cfg = load_artifact_config(artifact_dir)
        names = list(cfg["task_names"])
        step_col = f"task_{names[0]}"
        payload_col = f"task_{names[1]}" if len(names) > 1 else None
        rows = []
        sources = [("tuned", "records.csv")]
        if (artifact_dir / "records_lpv.csv").exists():
            sources.append(("lpv", "records_lpv.csv"))
        for method, fname in sources:
            for r in load_records(artifact_dir, fname):
                if payload_col and abs(float(r[payload_col]) - 0.4) > 1e-9:
                    continue
                rows.append(
                    [
                        method,
                        repr(10.0 ** float(r[step_col])),
                        r["y_f"],
                        r["y_q"],
                        r["violation"],
                    ]
                )
        rows.sort(key=lambda row: (row[0], float(row[1])))
        return _write(out, ["method", "stepsize_mm", "cost", "constraint", "violation"], rows)

    # fig8: cumulative model data versus virtual time
    rows = []
    count = 0
    for r in load_records(artifact_dir):
        if r["accepted"] == "1" and r["phase"] == "active":
            count += 1
        rows.append([r["iteration"], r["virtual_time"], count, r["accepted"]])
    return _write(out, ["iteration", "virtual_time", "points_added", "accepted"], rows)
