"""
Counter-based seed fan-out.

Every random stream is derived from the global seed plus a tuple of keys
(purpose name, indices). Streams never depend on the order in which other
streams were consumed, so running work on a pool cannot change results.
"""
import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _spawn_key(keys: tuple[Key, ...]) -> tuple[int, ...]:
    return tuple(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys)


def seed_sequence(seed: int, *keys: Key) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=_spawn_key(keys))


def derive_rng(seed: int, *keys: Key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *keys)))


def derive_seed(seed: int, *keys: Key) -> int:
    """63-bit integer seed for libraries that want a plain int (torch)."""
    return int(seed_sequence(seed, *keys).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
