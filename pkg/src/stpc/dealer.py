"""Correlated randomness generated by the client acting as trusted dealer.

Each controller step consumes one :class:`StepBundle`: a matrix triple for
the ``Phi @ xi`` product and a truncation pair for the new state.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass

from .modring import Modulus, ZqMatrix, sample_signed, sample_uniform
from .rng import RandomSource
from .sharing import SharePair, reconst, share


class DealerError(ValueError):
    pass


def trunc_kappa(modulus: Modulus, lam: int) -> int:
    """Largest bit length whose values truncation handles: ``floor(log2 q) - lam - 1``."""
    return modulus.log2_floor - lam - 1


def check_trunc_params(modulus: Modulus, ell: int, lam: int) -> int:
    if ell < 1:
        raise DealerError(f"truncation needs ell >= 1, got {ell}")
    if lam < 1:
        raise DealerError(f"security parameter must be >= 1, got {lam}")
    kappa = trunc_kappa(modulus, lam)
    if kappa <= ell:
        raise DealerError(
            f"kappa = floor(log2 q) - lam - 1 = {kappa} must exceed ell = {ell}"
        )
    return kappa


@dataclass(frozen=True)
class TripleShare:
    """One party's view of a matrix triple."""

    party: int
    u: ZqMatrix
    v: ZqMatrix
    w: ZqMatrix


@dataclass(frozen=True)
class TruncShare:
    """One party's view of a truncation pair."""

    party: int
    r: ZqMatrix
    r_prime: ZqMatrix


@dataclass(frozen=True)
class MatrixTriple:
    u: SharePair
    v: SharePair
    w: SharePair

    def component(self, i: int) -> TripleShare:
        return TripleShare(i, self.u[i].value, self.v[i].value, self.w[i].value)

    def holds(self) -> bool:
        return reconst(self.w) == reconst(self.u) @ reconst(self.v)


@dataclass(frozen=True)
class TruncPair:
    r: SharePair
    r_prime: SharePair
    kappa: int
    ell: int
    lam: int

    def component(self, i: int) -> TruncShare:
        return TruncShare(i, self.r[i].value, self.r_prime[i].value)

    def in_range(self) -> bool:
        r_bits = self.kappa - self.ell + self.lam
        lo_r, hi_r = -(1 << (r_bits - 1)), (1 << (r_bits - 1)) - 1
        lo_p, hi_p = -(1 << (self.ell - 1)), (1 << (self.ell - 1)) - 1
        return all(lo_r <= int(v) <= hi_r for v in reconst(self.r).data.flat) and all(
            lo_p <= int(v) <= hi_p for v in reconst(self.r_prime).data.flat
        )


def gen_triple(d1: int, d2: int, d3: int, modulus: Modulus, rng: RandomSource) -> MatrixTriple:
    if min(d1, d2, d3) < 1:
        raise DealerError("triple dimensions must be positive")
    U = sample_uniform(d1, d2, modulus, rng)
    V = sample_uniform(d2, d3, modulus, rng)
    return MatrixTriple(share(U, rng), share(V, rng), share(U @ V, rng))


def gen_trunc_pair(d1: int, d2: int, modulus: Modulus, ell: int, lam: int,
                   rng: RandomSource) -> TruncPair:
    kappa = check_trunc_params(modulus, ell, lam)
    R = sample_signed(d1, d2, kappa - ell + lam, rng)
    R_prime = sample_signed(d1, d2, ell, rng)
    return TruncPair(
        share(ZqMatrix(R, modulus), rng),
        share(ZqMatrix(R_prime, modulus), rng),
        kappa, ell, lam,
    )


@dataclass(frozen=True)
class StepBundle:
    """Randomness for one controller step, tagged with a per-session serial."""

    serial: int
    triple: MatrixTriple
    trunc: TruncPair


def gen_bundle(spec, rng: RandomSource, serial: int = 0) -> StepBundle:
    """``spec`` needs ``n, m, p, modulus, ell, lam`` attributes."""
    n, m, p = spec.n, spec.m, spec.p
    triple = gen_triple(n + m, n + p, 1, spec.modulus, rng)
    trunc = gen_trunc_pair(n, 1, spec.modulus, spec.ell, spec.lam, rng)
    return StepBundle(serial, triple, trunc)


def gen_batch(count: int, spec, rng: RandomSource, start: int = 0) -> list[StepBundle]:
    if count < 1:
        raise DealerError("count must be >= 1")
    return [gen_bundle(spec, rng, start + i) for i in range(count)]


class Dealer:
    """Issues bundles with strictly increasing serials, optionally pre-generated.

    With ``prefetch > 0`` a background thread keeps up to ``prefetch`` bundles
    ready in a bounded queue. The dealer owns its random source, so the
    bundle sequence is the same with or without prefetching.
    """

    def __init__(self, spec, rng: RandomSource, prefetch: int = 0):
        self.spec = spec
        self._rng = rng
        self._serial = 0
        self._issued = -1
        self._queue: queue.Queue | None = None
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        if prefetch > 0:
            self._queue = queue.Queue(maxsize=prefetch)
            self._thread = threading.Thread(target=self._produce, daemon=True)
            self._thread.start()

    def _make(self) -> StepBundle:
        b = gen_bundle(self.spec, self._rng, self._serial)
        self._serial += 1
        return b

    def _produce(self) -> None:
        while not self._stop.is_set():
            b = self._make()
            while not self._stop.is_set():
                try:
                    self._queue.put(b, timeout=0.1)
                    break
                except queue.Full:
                    continue

    def next_bundle(self) -> StepBundle:
        b = self._queue.get() if self._queue is not None else self._make()
        if b.serial <= self._issued:
            raise DealerError(f"bundle {b.serial} already issued")
        self._issued = b.serial
        return b

    def close(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=1.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
