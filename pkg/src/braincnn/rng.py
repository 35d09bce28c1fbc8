"""Seeded random streams.

All stochastic behaviour in the package (weight init, dropout masks,
shuffling, augmentation draws) flows through generators built here, so a
run is reproducible from its seeds alone.  The algorithm is numpy's PCG64,
which is stable across platforms and pinned for the life of this repo.
"""

from __future__ import annotations

import numpy as np


def seeded_rng(seed: int) -> np.random.Generator:
    """Return a deterministic PCG64 generator for ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def derived_rng(*keys: int) -> np.random.Generator:
    """Generator keyed by a tuple, e.g. (epoch_seed, sample_index).

    Distinct key tuples give statistically independent streams, and the
    mapping is deterministic, so per-sample work can run in any order
    without changing results.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(keys))))
