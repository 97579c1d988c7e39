"""Deterministic derivation of independent random streams.

Every stochastic step in the simulator draws from a generator keyed by
(root seed, purpose tag, context ints). Streams with distinct keys are
statistically independent, so work items can run in any order (or in
parallel) without changing results.
"""

import numpy as np

# Purpose tags. Keep values stable: they are part of the reproducibility
# contract for a given root seed.
STREAM_INIT = 1
STREAM_PARTITION = 2
STREAM_SPLIT = 3
STREAM_SELECT = 4
STREAM_TRAIN = 5
STREAM_ATTACK = 6
STREAM_ROUND = 7

Seed = "int | tuple[int, ...]"


def seed_key(seed, *tags) -> tuple[int, ...]:
    """Flatten a root seed plus context tags into one entropy tuple."""
    base = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    return base + tuple(int(t) for t in tags)


def child_rng(seed, *tags) -> np.random.Generator:
    """Generator for (seed, *tags); distinct keys give independent streams."""
    return np.random.default_rng(seed_key(seed, *tags))
