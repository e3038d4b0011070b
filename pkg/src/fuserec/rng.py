"""Seed handling: one master seed, named substreams.

Every source of randomness (init, dropout, split, synth, batch shuffling)
derives its generator from the master seed plus a stable stream name, so
components stay reproducible independently of each other.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a Generator for the named stream under the given master seed.

    The name is hashed with SHA-256, so the mapping is stable across
    platforms and Python versions.
    """
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    tag = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, tag]))
