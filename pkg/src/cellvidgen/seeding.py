"""Deterministic seed derivation.

One master seed is split per stage / per cell through a counter-based
scheme built on ``numpy.random.SeedSequence`` so that every component owns
an independent, reproducible stream. Labels are hashed with SHA-256, which
is stable across platforms and Python versions (unlike ``hash()``).
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_key(label) -> int:
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed_sequence(master_seed: int, *labels) -> np.random.SeedSequence:
    """Build a SeedSequence for ``master_seed`` refined by string/int labels."""
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF]
    entropy.extend(_label_key(lab) for lab in labels)
    return np.random.SeedSequence(entropy)


def rng_for(master_seed: int, *labels) -> np.random.Generator:
    """Return a Philox generator for the derived stream.

    Philox is counter-based, so identical (seed, labels) give bit-identical
    draws on every platform.
    """
    return np.random.Generator(np.random.Philox(derive_seed_sequence(master_seed, *labels)))


def derive_int_seed(master_seed: int, *labels) -> int:
    """Collapse a derived stream to a single integer seed (for APIs that take one)."""
    return int(derive_seed_sequence(master_seed, *labels).generate_state(1, np.uint64)[0])
