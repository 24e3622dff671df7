"""Atomic file writes and manifest-stamped CSV/JSONL helpers.

Every table the pipeline emits starts with a ``# manifest_hash=...``
comment line (JSONL uses a header record instead) so any output can be
traced back to the run that produced it. Readers here skip the stamp.
All writes go through a temp-file-then-rename so interrupted runs never
leave half-written outputs behind.
"""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path
from typing import Iterable, Sequence

MANIFEST_PREFIX = "# manifest_hash="


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_csv(
    path: Path,
    header: Sequence[str],
    rows: Iterable[Sequence[object]],
    manifest_hash: str | None = None,
) -> None:
    """Write a stamped CSV. Floats are serialized with repr so they round-trip."""
    buf = io.StringIO()
    if manifest_hash:
        buf.write(f"{MANIFEST_PREFIX}{manifest_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    atomic_write_text(path, buf.getvalue())


def read_csv(path: Path) -> tuple[list[str], list[dict[str, str]], str | None]:
    """Read a stamped CSV back into (header, rows-as-dicts, manifest_hash)."""
    manifest_hash = None
    with open(path, encoding="utf-8-sig", newline="") as fh:
        first = fh.readline()
        if first.startswith(MANIFEST_PREFIX):
            manifest_hash = first[len(MANIFEST_PREFIX):].strip()
        else:
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return [], [], manifest_hash
        rows = [dict(zip(header, row)) for row in reader]
    return header, rows, manifest_hash


def write_jsonl(
    path: Path,
    records: Iterable[dict],
    manifest_hash: str | None = None,
) -> None:
    lines = []
    if manifest_hash:
        lines.append(json.dumps({"kind": "header", "manifest_hash": manifest_hash}))
    for record in records:
        lines.append(json.dumps(record, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_jsonl(path: Path) -> tuple[list[dict], str | None]:
    records: list[dict] = []
    manifest_hash = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record.get("kind") == "header":
                manifest_hash = record.get("manifest_hash")
                continue
            records.append(record)
    return records, manifest_hash
