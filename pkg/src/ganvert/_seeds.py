"""Seeded random streams, one namespace per purpose.

A user-facing seed ``s`` for purpose ``p`` feeds ``SeedSequence([p, s])``,
so the same integer used as a weight seed, a target seed and an inversion
seed yields unrelated streams.
"""

import numpy as np

WEIGHTS = 1
TARGET = 2
RESTART = 3
RANDOM_START = 4
PROBE = 5
EXTRACTOR = 6
GRADCHECK = 7


def seed_sequence(purpose, seed, *key):
    return np.random.SeedSequence([purpose, int(seed)], spawn_key=tuple(key))


def rng(purpose, seed, *key):
    return np.random.default_rng(seed_sequence(purpose, seed, *key))
