"""Seeded random streams.

All randomness (initialisation, scheduled-sampling draws, data order, synthetic noise) comes
from numpy's PCG64 bit generator, which produces the same stream on every platform for a
given seed.
"""
import numpy as np

PRNG_ALGORITHM = "PCG64"


def make_prng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def sample_index(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw one index from a probability vector by inverse-CDF on a single uniform."""
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(probs) - 1))
