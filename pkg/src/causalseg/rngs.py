"""Deterministic RNG stream derivation.

Every stochastic consumer (init, data, split, per-epoch training noise,
latent draws) owns a Generator derived from (seed, stream key...), so any
run is a pure function of its seed and resuming mid-run replays exactly.
"""

import zlib

import numpy as np


def derive_rng(seed: int, *keys) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        words.append(int(k) & 0xFFFFFFFF if isinstance(k, (int, np.integer)) else zlib.crc32(str(k).encode()))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))
