"""Delimited table I/O shared by every stage.

Tables are comma separated, with optional ``# key=value`` metadata lines
before the column header.  Writes go to a temporary file in the target
directory and are renamed into place, so readers never see partial files.
"""
from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence


def fmt(value) -> str:
    """Render a cell deterministically (floats use the shortest round-trip repr)."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "dtype"):
        # numpy scalar
        return fmt(value.item())
    return str(value)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(
    path: str | os.PathLike,
    header: Sequence[str],
    rows: Iterable[Sequence],
    meta: dict | None = None,
) -> None:
    buf = io.StringIO()
    for key, value in (meta or {}).items():
        buf.write(f"# {key}={fmt(value)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_table(path: str | os.PathLike) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Return ``(meta, rows)``; rows are dicts keyed by the header names."""
    meta: dict[str, str] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
            elif line.strip():
                lines.append(line)
    reader = csv.DictReader(lines, skipinitialspace=True)
    rows = [{k.strip(): (v or "").strip() for k, v in row.items()} for row in reader]
    return meta, rows
