"""Seeded random streams.

Every random draw in this package flows from one user seed through the
Philox 4x64-10 counter-based generator.  A stream is addressed by the pair
``(seed, purpose)`` used as the two 64-bit Philox key words, so independent
consumers never share state and an implementation in another language can
reproduce the byte streams exactly.
"""

from __future__ import annotations

import numpy as np

PURPOSE_DATASET = 1
PURPOSE_MODEL_INIT = 2
PURPOSE_SHUFFLE = 3


def stream(seed: int, purpose: int) -> np.random.Generator:
    """Return the generator for (seed, purpose); same pair, same stream."""
    return np.random.Generator(np.random.Philox(key=[int(seed), int(purpose)]))
