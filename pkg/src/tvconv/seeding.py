"""Derived random streams.

Every random choice in the package flows from one integer seed. Submodules
get independent streams by hashing (seed, purpose-string) with sha256 and
seeding a generator from the first 8 little-endian bytes, so adding a new
consumer never perturbs existing streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


def subseed(seed: int, purpose: str) -> int:
    digest = hashlib.sha256(f"{seed}/{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(subseed(seed, purpose))
