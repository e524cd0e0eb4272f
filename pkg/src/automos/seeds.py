"""Deterministic derivation of independent random streams from one seed.

Every stochastic choice in the toolkit draws from a generator keyed by the
user seed plus a small integer path (subsystem, fold, utterance index, ...),
so reruns are bit-identical and streams never alias across subsystems.
"""

from __future__ import annotations

import numpy as np


def derive_seed(*parts: int) -> int:
    """Collapse an integer key path into a single u64 seed."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def rng_for(*parts: int) -> np.random.Generator:
    """Fresh generator for the given key path."""
    return np.random.default_rng(np.random.SeedSequence(list(parts)))
