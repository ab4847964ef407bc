"""Atomic file output and provenance-tagged CSV tables."""
from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path

CSV_SCHEMA_VERSION = 1


def atomic_write_text(path, text: str):
    """Write via a temp file in the target directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def fmt(value) -> str:
    """Shortest round-tripping text for numbers; blanks for missing values."""
    if value is None:
        return ""
    if isinstance(value, float):
        if value != value:
            return "nan"
        return repr(value)
    return str(value)


def provenance_line(table: str, config_hash: str | None, seed) -> str:
    parts = [f"schema=aesthetic3d.{table}/{CSV_SCHEMA_VERSION}"]
    if config_hash is not None:
        parts.append(f"config_sha256={config_hash}")
    if seed is not None:
        parts.append(f"seed={seed}")
    return "# " + " ".join(parts)


def render_csv(header, rows, table: str, config_hash: str | None = None, seed=None) -> str:
    buf = io.StringIO()
    buf.write(provenance_line(table, config_hash, seed) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows, table: str, config_hash: str | None = None, seed=None):
    atomic_write_text(path, render_csv(header, rows, table, config_hash, seed))


def read_csv(path):
    """Return ``(meta, header, rows)``; ``meta`` parses the ``# key=value`` line."""
    meta = {}
    with open(path, newline="") as fh:
        lines = [ln for ln in fh]
    body = []
    for ln in lines:
        if ln.startswith("#"):
            for tok in ln[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        elif ln.strip():
            body.append(ln)
    reader = csv.reader(body)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError(f"{path}: empty table") from None
    return meta, header, [row for row in reader]
