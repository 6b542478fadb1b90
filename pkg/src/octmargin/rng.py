"""Seeded random streams.

All randomness in the package flows from one root seed split into named
streams (init, folds, dropout, sampler, ...) so that components can be
re-run or re-ordered without perturbing each other.
"""

import hashlib

import numpy as np


def seed_stream(root_seed: int, name: str) -> np.random.Generator:
    """Return a Generator for the named stream derived from the root seed."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([root_seed & 0xFFFFFFFF, key]))
