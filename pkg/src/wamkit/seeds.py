"""Deterministic sub-seed derivation.

Every stochastic stage derives its own seed from one master seed and a
purpose label, so corpora and training runs replay byte-identically.
"""

import hashlib

import numpy as np


def spawn(master: int, label: str) -> int:
    """Derive a 63-bit sub-seed from a master seed and a label."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng(master: int, label: str) -> np.random.Generator:
    return np.random.default_rng(spawn(master, label))
