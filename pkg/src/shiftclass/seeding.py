"""Deterministic sub-seed derivation.

Every random decision in the pipeline draws from a sub-seed derived from one
master seed and a stable role string, so a whole experiment is reproducible
from a single integer and the derivation is portable across languages:

    sub_seed = first 8 bytes (big-endian, unsigned) of SHA-256("<seed>:<role>")
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, role: str) -> int:
    """64-bit sub-seed for `role`, deterministic in (master_seed, role)."""
    digest = hashlib.sha256(f"{master_seed}:{role}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(master_seed: int, role: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, role))
