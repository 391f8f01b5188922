"""Deterministic RNG derivation.

Every random draw in the package flows from a single user seed through
`rng_for(seed, *path)`, where the path is a small tuple of integers naming
the consumer (scene generation, parameter init, epoch batching, ...).
Deriving per-purpose generators this way keeps runs bit-reproducible and
lets training resume mid-run without serializing RNG state.
"""

import numpy as np

# stable stream tags; order must never change once released
STREAM_SCENE = 1
STREAM_QUERY = 2
STREAM_INIT_COARSE = 3
STREAM_INIT_FINE = 4
STREAM_EPOCH_COARSE = 5
STREAM_EPOCH_FINE = 6
STREAM_PMC = 7
STREAM_PERTURB = 8


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """Return a Generator keyed by (seed, *path)."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *path])))
