"""Deterministic RNG stream derivation.

Every stochastic component draws from a counter-based Philox generator keyed
by the experiment seed plus integer stream labels (round index, replication
index, purpose tag).  Streams with distinct labels are independent, so
replications can run concurrently and still reproduce bit-identically.
"""

from __future__ import annotations

import numpy as np

# Purpose tags for derived streams.
STREAM_CASCADE = 1
STREAM_ORACLE = 2
STREAM_F_EVAL = 3
STREAM_STUDY = 4


def derive_rng(experiment_seed: int, *stream: int) -> np.random.Generator:
    """Generator for the sub-stream identified by (experiment_seed, *stream)."""
    key = tuple(int(s) for s in stream)
    ss = np.random.SeedSequence(entropy=int(experiment_seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def spawn_seed(experiment_seed: int, *stream: int) -> int:
    """A derived 63-bit integer seed, for handing to worker processes."""
    return int(derive_rng(experiment_seed, *stream).integers(2 ** 63))
