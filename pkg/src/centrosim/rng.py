"""Seeded random-number generation, one generator family project-wide."""

import numpy as np


def make_rng(seed) -> np.random.Generator:
    """Build the project-standard generator (PCG64) from a seed.

    Arguments
    ---------
    seed: int, sequence of ints, or np.random.SeedSequence.

    Returns
    -------
    np.random.Generator backed by PCG64.
    """
    return np.random.Generator(np.random.PCG64(seed))
