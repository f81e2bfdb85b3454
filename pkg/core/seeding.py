"""
Counter-based random stream derivation.

All randomness in the lab comes from a master seed plus a purpose tag and a
tuple of counters (environment index, trial, restart, ...). Streams for
different counters are independent, so adding environments or cells never
perturbs the ones that already exist.
"""

import zlib
from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    MIXING = 1
    ENVIRONMENT = 2
    SAMPLES = 3
    TRIAL = 4
    ALGORITHM = 5
    RESTART = 6
    PROBE = 7
    INSTANCE = 8
    ROUND = 9


def _seed_sequence(seed: int, stream: Stream, keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        entropy=int(seed),
        spawn_key=(int(stream), *(int(k) for k in keys)),
    )


def derive_rng(seed: int, stream: Stream, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, stream, keys)"""
    return np.random.default_rng(_seed_sequence(seed, stream, keys))


def derive_seed(seed: int, stream: Stream, *keys: int) -> int:
    """63-bit integer seed for libraries that want a plain int (torch)"""
    state = _seed_sequence(seed, stream, keys).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))


def seed_from_rng(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**62))


def name_key(name: str) -> int:
    """Stable integer key for a string label"""
    return zlib.crc32(name.encode("utf-8"))
