"""Seeded random number generation.

All stochastic components draw from numpy's PCG64 generator, seeded from a
(run seed, stream name) pair via SeedSequence.  The stream name keeps
independent subsystems (corpus jitter, training noise, sampling chains)
decoupled: adding draws to one stream never shifts another, so runs are
bit-reproducible under a fixed seed.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int, stream: str = "main") -> np.random.Generator:
    """PCG64 generator for an independent named stream of a seeded run."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stream_key(stream)])))
