"""Stable 64-bit seed derivation on top of numpy's SeedSequence/PCG64"""
from typing import Tuple

import numpy as np

SEED_MASK = (1 << 64) - 1


def derive_seed(base: int, *keys: int) -> int:
    """Stable 64-bit hash of (base, keys); independent of call order."""
    if base < 0 or any(k < 0 for k in keys):
        raise ValueError("seeds and keys must be non-negative")
    state = np.random.SeedSequence([int(base) & SEED_MASK, *map(int, keys)]).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 32) | int(state[1])


def substreams(seed: int, count: int) -> Tuple[np.random.Generator, ...]:
    """Independent PCG64 generators spawned from one seed."""
    children = np.random.SeedSequence(int(seed) & SEED_MASK).spawn(count)
    return tuple(np.random.Generator(np.random.PCG64(child)) for child in children)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & SEED_MASK))
