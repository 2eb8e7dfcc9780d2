"""Deterministic child seeds.

Every random stream in the package is addressed by a master seed plus a
tuple of integer coordinates, e.g. ``(SIMULATE, s)`` or
``(IMPUTE, s, i)``. The coordinates are fed to numpy's ``SeedSequence``
as its spawn key, which hashes them into independent, well-mixed child
states. The mapping is order independent, so parallel workers produce the
same streams as a serial run.
"""

from __future__ import annotations

import numpy as np

# stage tags used as the first coordinate
SIMULATE = 1
MASK = 2
IMPUTE = 3
BOOTSTRAP = 4
RESTART = 5


def child_seed(seed: int, *coords: int) -> np.random.SeedSequence:
    key = tuple(int(c) for c in coords)
    if any(c < 0 for c in key):
        raise ValueError(f"seed coordinates must be nonnegative, got {key}")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=key)


def child_rng(seed: int, *coords: int) -> np.random.Generator:
    return np.random.default_rng(child_seed(seed, *coords))


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
