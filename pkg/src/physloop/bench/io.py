"""Versioned JSON containers with strict, path-qualified validation.

Every file carries {"schema": 1, "kind": ...}.  Unknown keys are rejected
with the offending path so a typo like "objcts" fails loudly instead of
silently dropping a field.  Serialization is canonical (sorted keys, fixed
indentation, trailing newline) so round trips are byte-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import MissingAsset, ParseError, SchemaVersionMismatch

SCHEMA_VERSION = 1


def canonical_dumps(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def save_container(payload: dict, path) -> None:
    Path(path).write_text(canonical_dumps(payload))


def load_container(path, kind: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingAsset(f"file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise ParseError(f"{path}: top level must be an object")
    version = payload.get("schema")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{path}: schema {version!r} unsupported (expected {SCHEMA_VERSION})"
        )
    if kind is not None and payload.get("kind") != kind:
        raise ParseError(
            f"{path}: expected kind {kind!r}, found {payload.get('kind')!r}"
        )
    return payload


def check_keys(obj: dict, allowed: set, required: set, path: str) -> None:
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: expected an object")
    for key in obj:
        if key not in allowed:
            raise ParseError(f"{path}.{key}: unknown key")
    for key in required:
        if key not in obj:
            raise ParseError(f"{path}.{key}: missing required key")


def check_list(value, path: str, length: int | None = None) -> list:
    if not isinstance(value, list):
        raise ParseError(f"{path}: expected a list")
    if length is not None and len(value) != length:
        raise ParseError(f"{path}: expected {length} entries, found {len(value)}")
    return value


def check_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{path}: expected a number")
    return float(value)
