"""Delimited-text emission and run manifests.

All outputs are plain comma-delimited UTF-8 text. Floats are written with
``repr``, the shortest representation that round-trips binary64 exactly, so
re-ingesting an emitted matrix reproduces it bit-for-bit. Manifests record
the resolved configuration, the seed, and content digests of every input so
a run can be reproduced byte-identically.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_matrix(path, M, row_labels=None, col_labels=None, index_name="row"):
    """Write a dense matrix as CSV with optional row/column labels."""
    M = np.asarray(M)
    if M.ndim == 1:
        M = M[:, None]
    lines = []
    if col_labels is not None:
        head = ([index_name] if row_labels is not None else []) + [str(c) for c in col_labels]
        lines.append(",".join(head))
    for r in range(M.shape[0]):
        row = ([str(row_labels[r])] if row_labels is not None else []) \
            + [_fmt(v) for v in M[r]]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix(path):
    """Read a matrix written by :func:`write_matrix`.

    Returns ``(values, row_labels, col_labels)``; labels are None when the
    file has no header or no label column.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    first = lines[0].split(",")
    has_header = not _is_number(first[-1])
    col_labels = None
    body = lines
    if has_header:
        col_labels = first
        body = lines[1:]
    rows, row_labels = [], []
    has_row_labels = body and not _is_number(body[0].split(",")[0])
    for line in body:
        parts = line.split(",")
        if has_row_labels:
            row_labels.append(parts[0])
            parts = parts[1:]
        rows.append([float(v) for v in parts])
    if has_row_labels and col_labels is not None:
        col_labels = col_labels[1:]
    return (np.asarray(rows),
            row_labels if has_row_labels else None,
            col_labels)


def _is_number(token):
    try:
        float(token)
        return True
    except ValueError:
        return False


def write_table(path, header, rows):
    """Write rows of mixed str/number fields as CSV."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            v if isinstance(v, str) else _fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir, command, config, inputs=(), seed=None):
    """Record the resolved run configuration and input digests.

    Deliberately contains nothing volatile (no timestamps, hosts, or paths
    outside the given inputs) so identical runs produce identical manifests.
    """
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(Path(p).name): sha256_file(p) for p in inputs},
    }
    path = Path(outdir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return manifest
