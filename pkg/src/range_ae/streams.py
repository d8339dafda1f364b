"""Counter-based random streams.

Every random draw in the pipeline comes from ``stream(master_seed, *keys)``,
a Philox generator keyed by a hash of the seed and an integer path such as
``(purpose, member, epoch)``. Any stream can be rebuilt in isolation, so
ensemble members, epochs and analysis cells never depend on call order.
"""
from __future__ import annotations

import enum

import numpy as np


class Purpose(enum.IntEnum):
    INIT = 0
    TRAIN_NOISE = 1
    ANALYSIS_NOISE = 2
    SCENE_NOISE = 3


def stream(master_seed: int, *keys: int) -> np.random.Generator:
    if master_seed < 0:
        raise ValueError(f"seed must be non-negative, got {master_seed}")
    seq = np.random.SeedSequence([int(master_seed), *(int(k) for k in keys)])
    return np.random.Generator(np.random.Philox(seq))
