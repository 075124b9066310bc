"""Deterministic random streams.

All randomness in the package flows from one root seed split into named
streams (init, shuffle, negatives, synthetic), so individual components
are reproducible in isolation.
"""

from __future__ import annotations

import zlib

import numpy as np


def named_rng(seed: int, stream: str) -> np.random.Generator:
    """Generator for a named stream derived from the root seed.

    The stream name is folded in with crc32, which is stable across
    platforms and Python processes (unlike hash()).
    """
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(stream.encode("utf-8"))])
