"""Splittable seeding for reproducible replicate ensembles."""
from __future__ import annotations

import numpy as np

_LIMIT = 1 << 32


def seed_split(master_seed: int, worker_index: int, replicate_index: int) -> int:
    """Injective map ``(master, worker, replicate) -> stream seed``.

    Worker and replicate indices must be below ``2**32``; the result is a plain
    Python integer, so it is identical on every platform.
    """
    if master_seed < 0 or worker_index < 0 or replicate_index < 0:
        raise ValueError("seed components must be nonnegative")
    if worker_index >= _LIMIT or replicate_index >= _LIMIT:
        raise ValueError("worker and replicate indices must be < 2**32")
    return (int(master_seed) << 64) | (int(worker_index) << 32) | int(replicate_index)


def make_rng(seed, leg: int = 0) -> np.random.Generator:
    """Generator for a stream seed; ``leg`` separates sub-streams of one replicate."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(leg,))))
