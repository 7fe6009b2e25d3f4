"""Seeded, named random streams.

All randomness in the toolkit flows from one 64-bit seed through named
sub-streams ("edm", "synth", ...).  Streams are backed by the counter-based
Philox generator, so a (seed, name) pair yields the same sequence on every
platform, process, and thread count.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def named_stream(seed: int, name: str) -> np.random.Generator:
    """Return an independent generator for `name` derived from `seed`."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]
    ss = np.random.SeedSequence(entropy=[int(seed) & _MASK64, *words])
    return np.random.Generator(np.random.Philox(ss))
