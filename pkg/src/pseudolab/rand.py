"""Named RNG sub-streams derived from one root seed.

Every source of randomness in a run (data synthesis, weight init, batch
sampling, each augmentation draw) gets its own stream keyed by name, so
changing e.g. the augmentation seed path can never perturb initialization.
"""

import hashlib

import numpy as np


def substream(seed, *tags) -> np.random.Generator:
    """Reproducible generator for (seed, tags). Pure function of its args;
    the sha256 fold keeps it stable across processes and platforms."""
    material = ":".join(str(t) for t in (seed, *tags)).encode()
    digest = hashlib.sha256(material).digest()
    words = [int.from_bytes(digest[i:i + 8], "little") for i in range(0, 32, 8)]
    return np.random.default_rng(words)
