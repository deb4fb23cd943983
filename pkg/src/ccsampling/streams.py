"""Deterministic random streams.

Every random draw in the package comes from a PCG64 generator seeded by a
``numpy.random.SeedSequence`` whose spawn key names the purpose of the
stream and, for replications, the replication index.  A replication's draws
therefore depend only on ``(seed, stream, index)`` and never on how the work
is split across workers.
"""

from __future__ import annotations

import numpy as np

POPULATION = 0
COUNTS = 1
REPLICATION = 2
TRUTH = 3
SEARCH = 4
SCENARIO = 5

_MAX_SEED = 2**64


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < _MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def generator(seed: int, stream: int, *index: int) -> np.random.Generator:
    """Generator for substream ``(stream, *index)`` of master ``seed``."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(stream, *index))
    return np.random.Generator(np.random.PCG64(ss))
