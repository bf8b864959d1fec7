"""Deterministic seed derivation.

All randomness in the package flows through numpy Generators created here.
Sub-streams are derived from (seed, *tags) so that independent pipeline
stages never share or race on RNG state, and any stage can be re-run in
isolation with bit-identical draws.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_int(tag: object) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2b(str(tag).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, *tags: object) -> np.random.Generator:
    """Return a Generator for the stream identified by (seed, *tags)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_to_int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *tags: object) -> int:
    """Collapse (seed, *tags) into a single integer seed for APIs that take one."""
    return int(substream(seed, *tags).integers(0, 2**63 - 1))
