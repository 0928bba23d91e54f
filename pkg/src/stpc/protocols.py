"""Two-party multiplication (matrix triples) and bit truncation.

The four local steps are pure functions of a party's own data plus whatever
it received. :class:`MultSession` and :class:`TruncSession` wrap them as
small single-use state machines, and the ``run_inprocess_*`` helpers wire
two of each together directly. The networked runtime drives the very same
sessions over sockets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dealer import TripleShare, TruncPair, TruncShare, MatrixTriple, check_trunc_params
from .modring import DimensionError, ZqMatrix, inv_pow2, reduce_centered
from .sharing import Share, SharePair


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class MultRound1Msg:
    """Masked differences ``X_i - U_i`` and ``Y_i - V_i`` sent to the peer."""

    party: int
    s: ZqMatrix
    t: ZqMatrix


@dataclass(frozen=True)
class TruncMaskMsg:
    """Party 0's masked component of ``Y``; only ever sent 0 -> 1."""

    y0: ZqMatrix


# --- multiplication ----------------------------------------------------------

def mult_local_mask(i: int, x_i: Share, y_i: Share, u_i: ZqMatrix, v_i: ZqMatrix) -> MultRound1Msg:
    if x_i.shape != u_i.shape or y_i.shape != v_i.shape:
        raise DimensionError("operand shapes do not match the triple")
    return MultRound1Msg(i, x_i.value - u_i, y_i.value - v_i)


def mult_open(a: MultRound1Msg, b: MultRound1Msg) -> tuple[ZqMatrix, ZqMatrix]:
    """Reconstruct ``S`` and ``T`` from both parties' masks."""
    if {a.party, b.party} != {0, 1}:
        raise ProtocolError("need one mask from each party")
    return a.s + b.s, a.t + b.t


def mult_finalize(i: int, S: ZqMatrix, T: ZqMatrix,
                  u_i: ZqMatrix, v_i: ZqMatrix, w_i: ZqMatrix) -> Share:
    z = u_i @ T + S @ v_i + w_i
    if i == 1:
        z = z + S @ T
    return Share(i, z)


class MultSession:
    """One party's run of the multiplication protocol (one round, both directions)."""

    def __init__(self, party: int, x_i: Share, y_i: Share, triple: TripleShare):
        if not (x_i.party == y_i.party == triple.party == party):
            raise ProtocolError("share ownership mismatch")
        self.party = party
        self.triple = triple
        self.mask = mult_local_mask(party, x_i, y_i, triple.u, triple.v)
        self.result: Share | None = None

    def outgoing(self) -> MultRound1Msg:
        return self.mask

    def receive(self, peer: MultRound1Msg) -> Share:
        if self.result is not None:
            raise ProtocolError("multiplication already finalized")
        if peer.party != 1 - self.party:
            raise ProtocolError("mask did not come from the peer")
        if peer.s.shape != self.mask.s.shape or peer.t.shape != self.mask.t.shape:
            raise DimensionError("peer mask shape mismatch")
        S, T = mult_open(self.mask, peer)
        tr = self.triple
        self.result = mult_finalize(self.party, S, T, tr.u, tr.v, tr.w)
        return self.result


# --- truncation --------------------------------------------------------------

def _ones_times(c: int, like: ZqMatrix) -> ZqMatrix:
    return ZqMatrix.full(like.rows, like.cols, c, like.modulus)


def trunc_local_mask(i: int, x_i: Share, r_i: ZqMatrix, rp_i: ZqMatrix, ell: int,
                     lam: int | None = None) -> ZqMatrix:
    """Party ``i``'s component of ``Y = X + 2^l R + R' + 2^(l-1) J``."""
    q = x_i.value.modulus
    if lam is not None:
        check_trunc_params(q, ell, lam)
    elif ell < 1:
        raise ProtocolError("truncation needs ell >= 1")
    if not (x_i.shape == r_i.shape == rp_i.shape):
        raise DimensionError("truncation pair shape mismatch")
    y = x_i.value + (1 << ell) * r_i + rp_i
    if i == 1:
        y = y + _ones_times(1 << (ell - 1), y)
    return y


def trunc_finalize(i: int, x_i: Share, rp_i: ZqMatrix, Y: ZqMatrix | None, ell: int) -> Share:
    """Party ``i``'s share of ``round(X / 2^l) + W`` with ``W`` in {-1, 0, 1}."""
    q = x_i.value.modulus
    acc = x_i.value.data + rp_i.data
    if i == 1:
        if Y is None:
            raise ProtocolError("party 1 needs the reconstructed Y")
        # centered reduction mod 2^l of Y - 2^(l-1)
        low = reduce_centered(Y.data - (1 << (ell - 1)), 1 << ell)
        acc = acc - low
    inv = inv_pow2(ell, q)
    return Share(i, ZqMatrix(acc * inv, q))


class TruncSession:
    """One party's run of truncation.

    Party 0 emits one :class:`TruncMaskMsg` and is done. Party 1 waits for
    that message, reconstructs ``Y`` and finishes. Nothing flows back.
    """

    def __init__(self, party: int, x_i: Share, pair: TruncShare, ell: int, lam: int | None = None):
        if not (x_i.party == pair.party == party):
            raise ProtocolError("share ownership mismatch")
        self.party = party
        self.ell = ell
        self.x_i = x_i
        self.rp = pair.r_prime
        self.y_i = trunc_local_mask(party, x_i, pair.r, pair.r_prime, ell, lam)
        self.result: Share | None = None
        if party == 0:
            self.result = trunc_finalize(0, x_i, self.rp, None, ell)

    def outgoing(self) -> TruncMaskMsg | None:
        return TruncMaskMsg(self.y_i) if self.party == 0 else None

    def receive(self, msg: TruncMaskMsg) -> Share:
        if self.party != 1:
            raise ProtocolError("only party 1 receives a truncation mask")
        if self.result is not None:
            raise ProtocolError("truncation already finalized")
        if msg.y0.shape != self.y_i.shape:
            raise DimensionError("truncation mask shape mismatch")
        Y = msg.y0 + self.y_i
        self.result = trunc_finalize(1, self.x_i, self.rp, Y, self.ell)
        return self.result


# --- in-process executor -----------------------------------------------------

@dataclass
class Transcript:
    """Messages exchanged between the parties, as ``(sender, receiver, kind, msg)``."""

    messages: list = field(default_factory=list)

    def record(self, sender: int, receiver: int, kind: str, msg) -> None:
        self.messages.append((sender, receiver, kind, msg))

    def count(self, kind: str | None = None) -> int:
        return sum(1 for m in self.messages if kind is None or m[2] == kind)


def run_inprocess_mult(xs: SharePair, ys: SharePair, t: MatrixTriple,
                       transcript: Transcript | None = None) -> SharePair:
    p0 = MultSession(0, xs.s0, ys.s0, t.component(0))
    p1 = MultSession(1, xs.s1, ys.s1, t.component(1))
    m0, m1 = p0.outgoing(), p1.outgoing()
    if transcript is not None:
        transcript.record(0, 1, "mult_mask", m0)
        transcript.record(1, 0, "mult_mask", m1)
    return SharePair(p0.receive(m1), p1.receive(m0))


def run_inprocess_trunc(xs: SharePair, pair: TruncPair,
                        transcript: Transcript | None = None) -> SharePair:
    p0 = TruncSession(0, xs.s0, pair.component(0), pair.ell, pair.lam)
    p1 = TruncSession(1, xs.s1, pair.component(1), pair.ell, pair.lam)
    msg = p0.outgoing()
    if transcript is not None:
        transcript.record(0, 1, "trunc_mask", msg)
    z1 = p1.receive(msg)
    return SharePair(p0.result, z1)


def round_half_up(v, ell: int):
    """``floor(v / 2^l + 1/2)`` for an int or an object array of ints, exactly."""
    half = (1 << ell) >> 1
    if isinstance(v, np.ndarray):
        return np.vectorize(lambda z: (int(z) + half) >> ell, otypes=[object])(v)
    return (int(v) + half) >> ell
