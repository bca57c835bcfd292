"""Per-chain random streams.

Chain ``c`` under seed ``s`` draws from ``SeedSequence(s, spawn_key=(c, k))``
where ``k`` separates the prior draw from the per-step noise.  A chain's
numbers therefore do not depend on how many chains run or how they are
batched, and two samplers sharing a seed consume identical step noise.
"""

from __future__ import annotations

import numpy as np

PRIOR_STREAM = 0
NOISE_STREAM = 1


def chain_generator(seed: int, chain: int, stream: int = NOISE_STREAM) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(chain, stream))))


def chain_normals(seed: int, chains, shape, stream: int = NOISE_STREAM) -> np.ndarray:
    """Standard normals of shape ``(len(chains), *shape)``, one stream per chain.

    Drawing ``shape`` in one call yields the same numbers as drawing it one
    row at a time, so step ``i`` of a chain always sees row ``i``.
    """
    chains = list(chains)
    shape = tuple(np.atleast_1d(shape))
    out = np.empty((len(chains), *shape))
    for row, c in enumerate(chains):
        out[row] = chain_generator(seed, c, stream).standard_normal(shape)
    return out
