"""Stream derivation: every stochastic unit gets its own generator."""

import numpy as np

# stream tags keep AIS, projection and bootstrap draws disjoint
AIS_STREAM = 1
PROJECT_STREAM = 2
BOOTSTRAP_STREAM = 3
TYPICAL_STREAM = 4
AIS_PILOT_STREAM = 5


def derive_rng(seed: int, *ids: int) -> np.random.Generator:
    """Generator keyed on ``(seed, *ids)``; independent of call order."""
    key = [int(seed), *(int(i) for i in ids)]
    if any(k < 0 for k in key):
        raise ValueError("seeds and ids must be non-negative")
    return np.random.default_rng(np.random.SeedSequence(key))
