"""Seed handling shared by the randomized operations."""

from __future__ import annotations

import numpy as np


def make_rng(seed) -> np.random.Generator:
    """Generator from an int, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    if seed is None:
        raise ValueError("a seed is required; wall-clock seeding is not supported")
    return np.random.default_rng(int(seed))


def run_seed_sequence(master_seed: int, *keys: int) -> np.random.SeedSequence:
    """Per-run seed derived from the master seed and run coordinates.

    Independent of scheduling, so parallel and sequential execution agree.
    """
    return np.random.SeedSequence([int(master_seed), *(int(k) for k in keys)])
