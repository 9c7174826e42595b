"""Counter-based random streams.

Every stream is keyed by ``(seed, rep_id, purpose, index)`` and backed by a
Philox generator, so a draw never depends on which worker produced it or in
which order replications were scheduled.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, rep_id: int = 0, purpose: str = "sample", index: int = -1) -> np.random.Generator:
    """Independent generator for one (seed, replication, purpose, index) key."""
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64,
        spawn_key=(int(rep_id), purpose_code(purpose), int(index) + 1),
    )
    return np.random.Generator(np.random.Philox(ss))
