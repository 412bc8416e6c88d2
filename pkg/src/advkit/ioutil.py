"""Shared persistence helpers: canonical JSON and atomic file writes.

Every artifact this package writes (models, datasets, reports) goes
through these two choke points so that identical in-memory content
always lands on disk as identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, compact separators, no NaN/Inf.

    Floats serialize via repr, i.e. the shortest string that round-trips
    the exact 64-bit value.
    """
    return json.dumps(obj, sort_keys=True, allow_nan=False, separators=(",", ":"))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see
    a partially written file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
