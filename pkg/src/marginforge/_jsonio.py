"""Shared JSON file helpers: atomic writes, parse errors with context."""

from __future__ import annotations

import json
import os
import tempfile

from .errors import ParseError


def atomic_write_text(path, text: str):
    """Write text to path via a temp file + rename, so readers never see
    a half-written file."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def load_json(path, what: str = "file"):
    with open(path) as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{what} {path}: line {exc.lineno}: {exc.msg}") from exc


def canonical_dumps(obj) -> str:
    """Key-sorted, whitespace-free dump used for fingerprinting."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
