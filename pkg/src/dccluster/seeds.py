"""Stable seed derivation for nested randomness.

Python's hash() is salted per process, so named sub-seeds are derived from a
sha256 digest instead; the same parts always give the same 63-bit seed, on
any platform.
"""
from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    text = ":".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)
