"""Shared CSV helpers: '#'-comment metadata headers and round-trip-exact floats.

Floats are written with repr (shortest round-trip form), so a file read back
reproduces the array bit-for-bit and reruns with identical inputs produce
bit-identical files.
"""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))  # plain-float repr: numpy scalars print their type


def write_csv(path, columns, rows, meta: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, val in (meta or {}).items():
            fh.write(f"# {key}={val}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def _cell(c: str):
    try:
        return float(c)
    except ValueError:
        return c.strip()


def read_csv(path):
    """Returns (column_names, rows, meta_dict); cells float where parseable."""
    meta: dict[str, str] = {}
    columns: list[str] | None = None
    rows: list[list] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for raw in csv.reader(fh):
            if not raw or all(not c.strip() for c in raw):
                continue
            if raw[0].lstrip().startswith("#"):
                text = ",".join(raw).lstrip().lstrip("#").strip()
                if "=" in text:
                    key, _, val = text.partition("=")
                    meta[key.strip()] = val.strip()
                continue
            if columns is None:
                columns = [c.strip() for c in raw]
            else:
                rows.append([_cell(c) for c in raw])
    if columns is None:
        raise ValueError(f"{path}: empty CSV")
    return columns, rows, meta


def content_hash(*parts) -> str:
    """Short stable hash over byte/str parts, for cache keys and file headers."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        else:
            h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()[:16]
