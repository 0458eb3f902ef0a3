"""Stable labeled seed derivation.

Every randomized stage of the audit pipeline draws its seed from the master
seed plus a label path (e.g. ("target",), ("ref", 2)), so adding a stage never
perturbs the random streams of earlier stages, and results are independent of
scheduling order. SHA-256 keeps the derivation stable across platforms and
Python versions, unlike the builtin hash().
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Derive a 64-bit seed from a master seed and a label path."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(*parts) -> np.random.Generator:
    """Seeded generator for the given label path."""
    return np.random.default_rng(derive_seed(*parts))
