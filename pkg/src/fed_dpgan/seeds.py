"""Seed hierarchy.

Every random stream is keyed off the master seed by a tuple
``(stage, *ids)`` through ``numpy.random.SeedSequence(master, spawn_key=...)``.
Keys are positional, so a stream for client 7 in round 3 does not depend on
how many other clients or rounds exist.
"""

import numpy as np

# Stage tags, first element of every spawn key.
DATASET = 0
SPLIT = 1
PARTITION = 2
MODEL_INIT = 3
GAN_SELECT = 4
GAN_CLIENT = 5
CLASSIFIER_SELECT = 6
CLASSIFIER_CLIENT = 7
AUGMENT = 8
CENTRAL = 9
SAMPLES = 10


def seed_sequence(master: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))


def derive_seed(master: int, *key: int) -> int:
    """A 32-bit integer seed for the stream named by ``key``."""
    return int(seed_sequence(master, *key).generate_state(1)[0])


def derive_rng(master: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master, *key))
