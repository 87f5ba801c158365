"""Small shared helpers: stable hashing, seed derivation, CSV writing."""

from __future__ import annotations

import hashlib


def stable_digest64(text: str) -> int:
    """Process-independent 64-bit digest of a string."""
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"),
                                          digest_size=8).digest(), "little")


def derive_seed(master: int, *tags) -> int:
    """Deterministic child seed from a master seed and a tag path."""
    key = ":".join([str(master)] + [str(t) for t in tags])
    return stable_digest64(key)


def fmt(value) -> str:
    """Canonical text form for config/report values (deterministic)."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".9g")
    if isinstance(value, (list, tuple)):
        return ",".join(fmt(v) for v in value)
    return str(value)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines) + "\n")
