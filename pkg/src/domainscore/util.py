"""Shared helpers: stable seed derivation and content hashing."""

from __future__ import annotations

import hashlib
import json

# Bumped whenever signature or solver behaviour changes, so stale caches
# are never reused across algorithm revisions.
ALGORITHM_VERSION = "1"


def stable_seed(*parts) -> int:
    """Derive a reproducible 64-bit seed from string-convertible parts.

    Gives every image, cluster run, and augmentation directive its own RNG
    stream, so parallel or out-of-order execution cannot change results.
    """
    text = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def canonical_json(data) -> str:
    """JSON with sorted keys and fixed separators, for hashing."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
