"""Seed derivation so every component gets its own reproducible stream."""

import zlib

import numpy as np


def derive_seed(seed: int, *keys: str) -> int:
    """Stable 32-bit seed for ``(seed, *keys)``; independent of PYTHONHASHSEED."""
    entropy = [int(seed)] + [zlib.crc32(k.encode("utf-8")) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def make_rng(seed: int, *keys: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
