"""Named random streams derived from a single root seed.

Every source of randomness in a run (world generation, meeting-sequence GA,
sample drawing) pulls from its own named stream so that perturbing one
subsystem never shifts the draws of another.
"""

from __future__ import annotations

import hashlib
import random


def stream_seed(root_seed: int, *names: object) -> int:
    """Derive a 64-bit seed for the stream identified by ``names``."""
    tag = "|".join([str(root_seed)] + [str(n) for n in names])
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stream_rng(root_seed: int, *names: object) -> random.Random:
    """A ``random.Random`` seeded for the named stream."""
    return random.Random(stream_seed(root_seed, *names))
