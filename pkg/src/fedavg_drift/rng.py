"""Keyed random streams.

Every stream is a Philox (counter-based) generator whose key is derived from
``(seed, *path)`` through :class:`numpy.random.SeedSequence`. Two streams with
different paths are statistically independent, and a stream's output depends
only on its key, never on how many other streams were drawn before it. This is
what makes per-client generation order-independent and thread-count invariant.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for ``seed`` at the given key path."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = tuple(int(p) for p in path)
    if any(p < 0 for p in key):
        raise ValueError(f"stream path entries must be non-negative, got {key}")
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


# Fixed top-level labels so different consumers of one seed never collide.
GENERATOR = 0
ALGORITHM = 1
MONTE_CARLO = 2
HARNESS = 3
