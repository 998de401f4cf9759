"""Seed derivation.

Every random stream is derived from one root seed as
``SeedSequence([root, STREAMS[name], *key])``. Streams never share state, so
changing, say, the number of MC samples cannot perturb the training shuffle.
"""

from __future__ import annotations

import numpy as np

STREAMS = {
    "synth": 1,
    "model": 2,
    "split": 3,
    "shuffle": 4,
    "dropout": 5,
    "mc": 6,
}


def seed_sequence(root: int, name: str, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(root), STREAMS[name], *map(int, key)])


def rng(root: int, name: str, *key: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(root, name, *key))


def derive_int(root: int, name: str, *key: int) -> int:
    """A 32-bit integer seed for APIs that take plain ints."""
    return int(seed_sequence(root, name, *key).generate_state(1)[0])
