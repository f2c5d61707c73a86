"""Stable seed derivation: ``(base + sha256(tag)[:8]) mod 2**64``."""
import hashlib

MASK = (1 << 64) - 1


def tag_hash(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "little")


def derive_seed(base: int, tag: str) -> int:
    return (int(base) + tag_hash(tag)) & MASK
