"""Versioned CSV and JSON artifacts.

CSV files start with ``#``-prefixed lines holding one JSON metadata object,
followed by a header row and the data.  JSON files hold ``{"meta": ...,
"result": ...}``.  Floats are written with ``repr`` and keys are sorted, so
identical inputs give byte-identical files.
"""
from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from . import __version__
from .dual_engine import FK_CLIP

SCHEMA_VERSION = 1
OUTPUT_ENV = "SELFREG_OUTPUT_DIR"
DEFAULT_OUTPUT = "selfreg-out"


def output_dir(flag: str | None = None, config_value: str | None = None) -> Path:
    """--out flag, then the config, then $SELFREG_OUTPUT_DIR, then ./selfreg-out."""
    for choice in (flag, config_value, os.environ.get(OUTPUT_ENV)):
        if choice:
            return Path(choice)
    return Path(DEFAULT_OUTPUT)


def file_meta(command: str, cfg) -> dict:
    """Metadata stamped into every artifact."""
    return {"schema_version": SCHEMA_VERSION, "artifact_version": __version__,
            "command": command, "config_hash": cfg.hash, "seed": cfg.seed,
            "replicates": cfg.replicates,
            "scheme_constants": {"dt": cfg.engine["dt"], "scheme": cfg.engine["scheme"],
                                 "dual_scheme": cfg.engine["dual_scheme"],
                                 "n_max": cfg.geo.rho_truncation, "fk_clip": FK_CLIP}}


def to_plain(obj):
    """Recursively convert numpy scalars/arrays to JSON types (non-finite floats become strings)."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, np.generic):
        return to_plain(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(to_plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: Path, meta: dict, result) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps({"meta": meta, "result": result}), encoding="utf-8")
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return v


def write_csv(path: Path, meta: dict, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(to_plain(meta), sort_keys=True, allow_nan=False) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> tuple[dict, list[str], list[list[str]]]:
    """Metadata, header and raw string rows of a file written by :func:`write_csv`."""
    meta_lines, body = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            (meta_lines if line.startswith("# ") else body).append(line)
    meta = json.loads("".join(l[2:] for l in meta_lines)) if meta_lines else {}
    rows = list(csv.reader(body))
    return meta, rows[0], rows[1:]
