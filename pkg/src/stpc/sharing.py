"""Two-party additive secret sharing over Z_q and its local operations.

Most operations accept either a :class:`SharePair` (both components, as the
dealer or a test harness sees them) or a single :class:`Share` (what one
party holds). Constants are folded into party 0's component only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

from .modring import DimensionError, ZqMatrix, mat_mul, sample_uniform, vstack
from .modring import scalar_mul as _zq_scalar_mul
from .rng import RandomSource


@dataclass(frozen=True)
class Share:
    party: int
    value: ZqMatrix

    def __post_init__(self):
        if self.party not in (0, 1):
            raise ValueError(f"party must be 0 or 1, got {self.party}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape


@dataclass(frozen=True)
class SharePair:
    s0: Share
    s1: Share

    def __post_init__(self):
        if self.s0.party != 0 or self.s1.party != 1:
            raise ValueError("SharePair must hold party 0 then party 1")
        if self.s0.value.shape != self.s1.value.shape:
            raise DimensionError("share shapes differ")
        if self.s0.value.modulus != self.s1.value.modulus:
            raise ValueError("share moduli differ")

    @classmethod
    def of(cls, v0: ZqMatrix, v1: ZqMatrix) -> "SharePair":
        return cls(Share(0, v0), Share(1, v1))

    def __getitem__(self, i: int) -> Share:
        return (self.s0, self.s1)[i]

    @property
    def shape(self) -> tuple[int, int]:
        return self.s0.value.shape


Shared = Union[Share, SharePair]


def share(X: ZqMatrix, rng: RandomSource) -> SharePair:
    """Split ``X`` into ``(R, X - R)`` with ``R`` uniform."""
    R = sample_uniform(X.rows, X.cols, X.modulus, rng)
    return SharePair.of(R, X - R)


def reconst(p: SharePair) -> ZqMatrix:
    return p.s0.value + p.s1.value


def _map(a: Shared, fn: Callable[[ZqMatrix], ZqMatrix]) -> Shared:
    if isinstance(a, SharePair):
        return SharePair.of(fn(a.s0.value), fn(a.s1.value))
    return Share(a.party, fn(a.value))


def _zip(a: Shared, b: Shared, fn: Callable[[ZqMatrix, ZqMatrix], ZqMatrix]) -> Shared:
    if isinstance(a, SharePair) and isinstance(b, SharePair):
        return SharePair.of(fn(a.s0.value, b.s0.value), fn(a.s1.value, b.s1.value))
    if isinstance(a, Share) and isinstance(b, Share):
        if a.party != b.party:
            raise ValueError("cannot combine shares held by different parties")
        return Share(a.party, fn(a.value, b.value))
    raise TypeError("operands must both be Share or both be SharePair")


def add_shares(a: Shared, b: Shared) -> Shared:
    return _zip(a, b, lambda x, y: x + y)


def sub_shares(a: Shared, b: Shared) -> Shared:
    return _zip(a, b, lambda x, y: x - y)


def add_const(a: Shared, Y: ZqMatrix) -> Shared:
    """Add a public constant; only party 0's component changes."""
    if a.shape != Y.shape:
        raise DimensionError(f"constant shape {Y.shape} does not match share {a.shape}")
    if isinstance(a, SharePair):
        return SharePair(Share(0, a.s0.value + Y), a.s1)
    return Share(0, a.value + Y) if a.party == 0 else a


def sub_const(a: Shared, Y: ZqMatrix) -> Shared:
    return add_const(a, -Y)


def mul_const_right(a: Shared, Z: ZqMatrix) -> Shared:
    """``[[X]] Z`` computed componentwise."""
    return _map(a, lambda x: mat_mul(x, Z))


def mul_const_left(Z: ZqMatrix, a: Shared) -> Shared:
    """``Z [[X]]`` computed componentwise."""
    return _map(a, lambda x: mat_mul(Z, x))


def scalar_mul(k: int, a: Shared) -> Shared:
    return _map(a, lambda x: _zq_scalar_mul(k, x))


def stack_shares(blocks: list[Shared]) -> Shared:
    """Vertically stack shares of the same kind (all pairs or one party's shares)."""
    if all(isinstance(b, SharePair) for b in blocks):
        return SharePair.of(vstack(b.s0.value for b in blocks), vstack(b.s1.value for b in blocks))
    parties = {b.party for b in blocks}
    if len(parties) != 1:
        raise ValueError("cannot stack shares of different parties")
    return Share(parties.pop(), vstack(b.value for b in blocks))
