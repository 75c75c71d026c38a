"""Stable seed derivation so every random stream is keyed by (seed, name, index...)."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *parts: object) -> int:
    """64-bit seed from a base seed and a path of names/indices.

    Uses SHA-256 rather than ``hash()`` so values are stable across
    processes and Python versions.
    """
    key = "/".join([str(int(seed)), *(str(p) for p in parts)]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def derive_rng(seed: int, *parts: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *parts))
