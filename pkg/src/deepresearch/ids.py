"""Canonical serialization and content-addressed identifiers.

Everything that ends up in a trace, a store, or a citation is keyed by a
hash of its canonical JSON form, so identical inputs always produce
identical ids across processes and runs.
"""

from __future__ import annotations

import hashlib
import json
import re
from typing import Any


def canonical_json(obj: Any) -> str:
    """Serialize to the canonical form used for hashing and snapshots."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_hex(data: str | bytes) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def content_hash(obj: Any) -> str:
    """Full sha256 over the canonical JSON of ``obj``."""
    return sha256_hex(canonical_json(obj))


def short_id(prefix: str, *parts: Any, length: int = 12) -> str:
    """Readable content-addressed id: ``prefix-<hash prefix>``."""
    return f"{prefix}-{content_hash(list(parts))[:length]}"


_SLUG_RE = re.compile(r"[^a-z0-9]+")


def slugify(text: str, max_len: int = 48) -> str:
    """Filesystem-safe slug for fixture keys; hash suffix keeps it unique."""
    base = _SLUG_RE.sub("-", text.lower()).strip("-")[:max_len].strip("-")
    return f"{base or 'key'}-{sha256_hex(text)[:8]}"
