"""Seeded random streams.

Philox is a counter-based generator with published constants (Salmon et al.
2011), so a seed pins the stream independently of platform and numpy's
default bit generator choice.
"""

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))
