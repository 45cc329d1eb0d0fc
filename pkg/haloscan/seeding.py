from __future__ import annotations

from typing import Union

import numpy as np

# Stream identifiers keep sub-streams of one (trial, step) disjoint.
TRUTH_STREAM = 0
TRACK_STREAM = 1
NOISE_STREAM = 2
ENVELOPE_STREAM = 3


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    """
    Return a generator for the sub-stream identified by key.

    The same (master_seed, key) always yields the same stream, independent of
    the order in which streams are requested.
    """
    sequence = np.random.SeedSequence(master_seed, spawn_key=tuple(key))
    return np.random.default_rng(sequence)


def as_generator(seed: Union[int, np.random.Generator]) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
