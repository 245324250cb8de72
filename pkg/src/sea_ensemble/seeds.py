"""Deterministic seed derivation for reproducible experiments.

Python's built-in hash() is salted per process, so child seeds are derived
by SHA-256 over a canonical text encoding of (master seed, label parts).
The same (master, parts) always yields the same child seed, across runs,
platforms and worker processes.

Splitting rule used throughout the harness:

    derive_seed(master, "data")                  -> dataset synthesis / fold split
    derive_seed(master, "fold", f, "learner", i) -> init of learner i in fold f
    derive_seed(master, "fold", f, "bootstrap")  -> bagging resample in fold f

The method name never enters the derivation, so different methods trained
from the same master seed share data splits and initial learner parameters.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def derive_seed(master: int, *parts: int | str) -> int:
    """Derive a child seed (63-bit nonnegative int) from a master seed and labels."""
    blob = ":".join([str(int(master))] + [str(p) for p in parts]).encode("utf-8")
    digest = hashlib.sha256(blob).digest()
    return int.from_bytes(digest[:8], "little") & _MASK63


def rng_for(master: int, *parts: int | str) -> np.random.Generator:
    """A numpy Generator seeded by derive_seed(master, *parts)."""
    return np.random.default_rng(derive_seed(master, *parts))
