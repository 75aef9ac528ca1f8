"""Seed-derivation helper for reproducible, shardable Monte Carlo runs."""

from __future__ import annotations

import numpy as np

__all__ = ["derive_rng"]


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Counter-based generator for a (seed, *path) stream.

    Streams for distinct paths are statistically independent, so trials can
    be sharded across workers and still reproduce the serial run bit for bit.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
