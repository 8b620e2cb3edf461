"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, purpose, *ids)`` so a chain's
draws never depend on how work is scheduled across threads.
"""

from __future__ import annotations

import numpy as np

__all__ = ["MOMENTUM", "SWAP", "INIT", "AUX", "stream", "chain_streams"]

# purpose tags
MOMENTUM = 0
SWAP = 1
INIT = 2
AUX = 3


def stream(seed: int, purpose: int, *ids: int) -> np.random.Generator:
    """Independent generator for one ``(seed, purpose, ids...)`` key."""
    key = (int(purpose),) + tuple(int(i) for i in ids)
    ss = np.random.SeedSequence(int(seed) % 2**64, spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def chain_streams(seed: int, purpose: int, count: int, *ids: int) -> list:
    """One generator per chain index ``0..count-1``; ``ids`` are prepended to the chain index."""
    return [stream(seed, purpose, *ids, k) for k in range(count)]
