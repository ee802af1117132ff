"""Seeded random streams.

Every source of randomness in the package is a ``numpy.random.Generator``
obtained from :func:`rng_stream`, so a ``(seed, stream_id)`` pair fully
determines a sequence of draws.
"""
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=self.seed & _MASK64, spawn_key=(self.stream_id & _MASK64,)
        )
        return np.random.Generator(np.random.PCG64(ss))


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return a fresh generator for ``(seed, stream_id)``."""
    return RngStream(int(seed), int(stream_id)).generator()


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a 63-bit child seed from ``seed`` and integer keys."""
    ss = np.random.SeedSequence(entropy=seed & _MASK64, spawn_key=tuple(k & _MASK64 for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
