"""Deterministic seed derivation.

Every random decision in the toolkit flows through a numpy PCG64 generator
whose seed is derived from a master seed plus a scope path (stage name,
dataset name, epoch index, member index, ...). Scoped derivation means
adding a new member or stage never perturbs the randomness of existing ones.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, *scope: object) -> int:
    """Map (master_seed, scope...) to a 63-bit seed via SHA-256.

    Scope parts are joined by "/" after str() conversion, so callers must
    use stable string forms (names, integers).
    """
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode("utf-8"))
    for part in scope:
        h.update(b"/")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little") >> 1


def derive_rng(master_seed: int, *scope: object) -> np.random.Generator:
    """PCG64 generator seeded from the derived scope seed."""
    return np.random.default_rng(derive_seed(master_seed, *scope))
