"""Run directory plumbing: config hashing, manifests, logs, result tables.

A run directory is laid out as out/<preset>/<timestamp>-<confighash>/ and
holds manifest.json, log.ndjson, results.csv, plot.svg and a checkpoint.
The manifest is written before training starts so crashed runs remain
inspectable. CSV files carry an explicit schema version line and loaders
reject versions they do not understand.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from pathlib import Path

import numpy as np

from .errors import SchemaMismatch

CSV_SCHEMA = "results.v1"
_CSV_PREFIX = "# schema: "


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def canonical_json(config):
    """Stable serialization: sorted keys, no whitespace dependence."""
    return json.dumps(config, sort_keys=True, default=_jsonable, separators=(",", ":"))


def config_hash(config):
    """12-hex-digit digest of a config mapping, stable under key reordering."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:12]


def create_run_dir(out_dir, preset, cfg_hash, timestamp=None):
    if timestamp is None:
        timestamp = time.strftime("%Y%m%dT%H%M%S")
    run_dir = Path(out_dir) / preset / f"{timestamp}-{cfg_hash}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def write_manifest(run_dir, manifest):
    path = Path(run_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable))
    return path


def read_manifest(run_dir):
    return json.loads((Path(run_dir) / "manifest.json").read_text())


def append_log_records(path, records):
    """Append line-delimited JSON records to a log file."""
    with open(path, "a") as fh:
        for record in records:
            fh.write(canonical_json(record) + "\n")


def read_log_records(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_results_csv(path, rows, fieldnames=None):
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames)
    writer.writeheader()
    writer.writerows(rows)
    Path(path).write_text(f"{_CSV_PREFIX}{CSV_SCHEMA}\n" + buf.getvalue())
    return path


def read_results_csv(path):
    text = Path(path).read_text()
    first, _, rest = text.partition("\n")
    if not first.startswith(_CSV_PREFIX):
        raise SchemaMismatch(f"{path} has no schema line")
    version = first[len(_CSV_PREFIX):].strip()
    if version != CSV_SCHEMA:
        raise SchemaMismatch(f"unsupported results schema {version!r}")
    return list(csv.DictReader(io.StringIO(rest)))
