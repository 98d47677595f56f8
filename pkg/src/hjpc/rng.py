"""Derived random streams.

Every stochastic unit of work (a trajectory, a training run, a sweep episode)
gets its own generator keyed by (root seed, domain, *indices) through
SeedSequence, so results are independent of execution order and of --jobs.
"""

from __future__ import annotations

import numpy as np

DOMAIN_DATASET = 1
DOMAIN_TRAIN_INIT = 2
DOMAIN_TRAIN_ORDER = 3
DOMAIN_EVAL_PREDICTION = 4
DOMAIN_SWEEP_INIT = 5
DOMAIN_SWEEP_NOISE = 6
DOMAIN_SWEEP_FADE = 7

# dataset ids within DOMAIN_DATASET
DS_HIGH_TRAIN = 0
DS_HIGH_TEST = 1
DS_MEDIUM_TRAIN = 2
DS_MEDIUM_TEST = 3
DS_LOW_TRAIN = 4
DS_LOW_TEST = 5

# model ids within DOMAIN_TRAIN_*
MODEL_HJEPA = 1
MODEL_JEPA1 = 2
MODEL_JEPA4 = 3
MODEL_SUPERVISED2 = 4
MODEL_SUPERVISED4 = 5
MODEL_AUTOENCODER = 6


def make_rng(seed: int, domain: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(domain), *map(int, key)])))
