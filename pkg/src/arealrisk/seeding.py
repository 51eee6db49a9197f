"""Deterministic derivation of sub-seeds from a master seed.

Replicates, chains, and synthetic inputs each get an independent stream
derived from (master_seed, labels...). Hashing goes through SHA-256 so the
mapping is stable across processes and platforms (Python's builtin hash is
salted per interpreter run and must not be used here).
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "derive_rng"]


def derive_seed(master_seed: int, *labels) -> int:
    """Map (master_seed, labels...) to a 64-bit seed, deterministically."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode("ascii"))
    for lab in labels:
        h.update(b"/")
        h.update(str(lab).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(master_seed: int, *labels) -> np.random.Generator:
    """Independent generator for the stream labeled by ``labels``."""
    return np.random.default_rng(derive_seed(master_seed, *labels))
