"""Deterministic RNG substreams derived from a single run seed.

Every source of randomness in a run (parameter init, split, per-epoch
shuffle, per-sample augmentation, per-batch dropout) draws from its own
counter-keyed PCG64 stream, so results are independent of evaluation
order and reproducible from the run seed alone.
"""

import numpy as np

STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_AUGMENT = 2
STREAM_DROPOUT = 3
STREAM_SPLIT = 4


def substream(seed: int, stream: int, *key: int) -> np.random.Generator:
    """Generator for stream `stream` of run `seed`, keyed by e.g. (epoch, sample)."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),) + tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))
