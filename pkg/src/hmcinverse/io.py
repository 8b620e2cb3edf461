"""CSV and JSON artifacts with schema headers.

Every CSV starts with one comment line ``# schema: col1,col2,...`` followed by a
plain header row. Floats are written with ``repr`` so a parse recovers them
exactly and two runs with the same inputs produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

__all__ = [
    "SCHEMAS",
    "format_value",
    "write_csv",
    "read_csv",
    "samples_rows",
    "write_samples",
    "read_samples",
    "write_json",
]

SCHEMAS = {
    "samples": ("chain", "draw", "dim", "value"),
    "report": ("metric", "stage", "dimension", "value"),
    "traces": ("stage", "transition_index", "chain", "dimension", "value"),
    "rounds": ("round", "chain", "replica_index", "rung", "log_prior", "log_likelihood",
               "swap_edge", "swap_accepted"),
    "ladder": ("rung", "T", "h", "p_swap", "rhat"),
}


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows) -> Path:
    """Write ``rows`` under a schema comment; returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write("# schema: " + ",".join(columns) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(v) for v in r])
    path.write_text(buf.getvalue())
    return path


def read_csv(path):
    """``(columns, rows)`` with rows as lists of strings; checks the schema line."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# schema: "):
        raise ValueError(f"{path}: missing schema comment line")
    declared = lines[0][len("# schema: "):].split(",")
    reader = csv.reader(lines[1:])
    header = next(reader)
    if header != declared:
        raise ValueError(f"{path}: header {header} does not match schema {declared}")
    return header, [row for row in reader]


def samples_rows(draws):
    d = np.asarray(draws)
    k, s, n = d.shape
    for c in range(k):
        for t in range(s):
            for j in range(n):
                yield c, t, j, d[c, t, j]


def write_samples(path, draws) -> Path:
    return write_csv(path, SCHEMAS["samples"], samples_rows(draws))


def read_samples(path) -> np.ndarray:
    """Inverse of :func:`write_samples`; returns ``(K, S, N)``."""
    _, rows = read_csv(path)
    a = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows])
    v = np.array([float(r[3]) for r in rows])
    out = np.empty(tuple(a.max(axis=0) + 1))
    out[a[:, 0], a[:, 1], a[:, 2]] = v
    return out


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
    return path
