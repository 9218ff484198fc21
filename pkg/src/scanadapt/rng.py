"""Seeded random streams.

Every generator in the package draws from a Philox-4x64 counter-based
bit generator keyed by ``(seed, stream tag, index)``. Philox output is
specified bit-for-bit by its key and counter, so a given key reproduces the
same draws on every platform, and distinct keys give independent streams.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

PHANTOM_BASE = 1
PHANTOM_JITTER = 2
SMAPS = 3
NOISE = 4
MASK_UNIFORM = 5
MASK_VDPD = 6
INIT_MASKS = 7
TEST_DATA = 99


def make_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    if index < 0 or index >= (1 << 40):
        raise ValueError("stream index out of range")
    key = np.array([int(seed) & _MASK64, ((stream & 0xFFFFFF) << 40) | index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
