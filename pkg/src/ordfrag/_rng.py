"""Seeded random streams separated by purpose.

``default_rng([s, 0])`` is the same stream as ``default_rng(s)`` because
trailing zero words are dropped from the seed. A non-zero purpose tag keeps
e.g. the surrogate draws of a diagnostic from replaying the uniforms that
generated the data when the same integer seed is reused.
"""

from __future__ import annotations

import zlib

import numpy as np


def purpose_tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("ascii")) | 1


def stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, purpose, index...)``."""
    return np.random.default_rng([int(seed), purpose_tag(purpose), *map(int, index)])
