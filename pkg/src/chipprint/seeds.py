"""Deterministic seed derivation.

Every stochastic stage derives its own 64-bit seed from the master seed
plus a label path, so reruns with the same config are byte-identical and
stages can be recomputed in isolation.
"""

import hashlib

import numpy as np


def derive_seed(master: int, *parts) -> int:
    """Derive a stable 64-bit seed from a master seed and label parts.

    Parts may be strings or ints; they are joined into a path string and
    hashed, so the result does not depend on Python's hash randomization.
    """
    path = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(f"{master}:{path}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def rng_for(master: int, *parts) -> np.random.Generator:
    """Generator seeded by derive_seed(master, *parts)."""
    return np.random.default_rng(derive_seed(master, *parts))
