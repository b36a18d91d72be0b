"""Reproducible per-replica random streams.

Each replica gets its own counter-based Philox generator derived from
``(master_seed, replica)`` through :class:`numpy.random.SeedSequence`, so the
draws of one replica never depend on how many others run or in what order.
"""

from __future__ import annotations

import numpy as np


def stream(master_seed: int, replica: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(replica),))
    return np.random.Generator(np.random.Philox(seq))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an int seed, or None (seed 0)."""
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(0 if rng is None else int(rng))
