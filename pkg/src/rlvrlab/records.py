"""Line-delimited JSON record files.

Every artifact written by rlvrlab is a text file with one JSON object per
line. The first line is a header ``{"schema": ..., "version": ...}`` followed
by any metadata; the remaining lines are the records. Floats are written with
``repr`` precision so a round trip is lossless.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Iterable

from .errors import SchemaError, SchemaVersionError

SCHEMA_PREFIX = "rlvrlab/"


def dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def header(kind: str, version: int, **meta: Any) -> dict:
    return {"schema": SCHEMA_PREFIX + kind, "version": version, **meta}


def write_records(path: str | Path, head: dict, records: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(head) + "\n")
        for rec in records:
            fh.write(dumps(rec) + "\n")
    return path


def parse_header(line: str, kind: str, version: int, path=None) -> dict:
    try:
        head = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"unreadable header: {exc}", path=path, line=1) from exc
    if not isinstance(head, dict) or head.get("schema") != SCHEMA_PREFIX + kind:
        raise SchemaError(
            f"expected schema {SCHEMA_PREFIX + kind!r}, got {head.get('schema') if isinstance(head, dict) else head!r}",
            path=path,
            line=1,
        )
    if head.get("version") != version:
        raise SchemaVersionError(
            f"schema {SCHEMA_PREFIX + kind} version {head.get('version')!r} is not supported "
            f"(expected {version})",
            path=path,
            line=1,
        )
    return head


def read_records(path: str | Path, kind: str, version: int) -> tuple[dict, list[dict]]:
    """Read a record file, validating its header.

    Raises :class:`SchemaError` naming the first malformed line.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SchemaError("empty file", path=path)
    head = parse_header(lines[0], kind, version, path)
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed record: {exc.msg}", path=path, line=lineno) from exc
        if not isinstance(rec, dict):
            raise SchemaError("record is not an object", path=path, line=lineno)
        out.append(rec)
    return head, out


def require_fields(rec: dict, fields: Iterable[str], *, path=None, line=None) -> None:
    missing = [f for f in fields if f not in rec]
    if missing:
        raise SchemaError(f"missing field(s) {', '.join(missing)}", path=path, line=line)


def finite_number(value: Any, *, path=None, line=None, field: str = "value") -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{field} must be a number", path=path, line=line)
    value = float(value)
    if not math.isfinite(value):
        raise SchemaError(f"{field} must be finite", path=path, line=line)
    return value
