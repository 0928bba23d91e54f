"""Random sources used by the dealer.

Everything that draws randomness takes an object with a ``randbytes(n)``
method. Production code uses the operating system CSPRNG; test mode uses a
seeded SHAKE-256 stream so that in-process and networked runs can be
replayed bit for bit.
"""

from __future__ import annotations

import hashlib
import random
from typing import Protocol


class RandomSource(Protocol):
    def randbytes(self, n: int) -> bytes: ...


class SeededRandom:
    """Deterministic byte stream: SHAKE-256(seed || counter) blocks."""

    def __init__(self, seed: int | bytes | str, label: str = ""):
        if isinstance(seed, int):
            seed = seed.to_bytes((seed.bit_length() + 8) // 8, "big", signed=True)
        elif isinstance(seed, str):
            seed = seed.encode()
        h = hashlib.sha256(b"stpc-seeded-random\x00" + label.encode() + b"\x00" + seed)
        self._key = h.digest()
        self._counter = 0

    def randbytes(self, n: int) -> bytes:
        if n <= 0:
            return b""
        block = hashlib.shake_256(self._key + self._counter.to_bytes(8, "big")).digest(n)
        self._counter += 1
        return block


def make_rng(seed: int | bytes | str | None = None, label: str = "") -> RandomSource:
    """System CSPRNG when ``seed`` is None, otherwise a reproducible stream.

    Distinct labels give independent streams from the same seed.
    """
    if seed is None:
        return random.SystemRandom()
    return SeededRandom(seed, label)
