"""Deterministic seed derivation for parallel Monte-Carlo runs.

Every frame gets its own counter-based generator seeded from
(master seed, frame index) so that results do not depend on how frames
are distributed over workers.
"""

from __future__ import annotations

import numpy as np

__all__ = ["mix64", "frame_rng"]

_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix64(seed: int, index: int) -> int:
    """Mix a master seed with a frame index into a well-spread 64-bit value."""
    return _splitmix64((_splitmix64(seed & _MASK) ^ index) & _MASK)


def frame_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for one frame, independent of worker layout."""
    return np.random.Generator(np.random.Philox(key=mix64(seed, index)))
