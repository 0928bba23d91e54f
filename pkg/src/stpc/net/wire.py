"""Frame format and payload codecs.

Frame: ``length:u32 | type:u8 | step:u64 | payload`` (big-endian), where
``length = 9 + len(payload)``. Payloads are concatenations of matrices in
the ``ZqMatrix.to_bytes`` layout.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from ..controller import InputShareMsg, PartySetup, StepMessage
from ..dealer import TripleShare, TruncShare
from ..modring import Modulus, ZqMatrix
from ..protocols import MultRound1Msg, TruncMaskMsg

HEADER = struct.Struct(">IBQ")
MAX_FRAME = 1 << 30
MAGIC = b"STPC"
VERSION = 1

CLIENT = 2  # role id; parties are 0 and 1


class FrameError(ValueError):
    pass


class MsgType(enum.IntEnum):
    HELLO = 1
    ACK = 2
    ERROR = 3
    SETUP = 4
    STEP_BUNDLE = 5
    MULT_MASK = 6
    TRUNC_MASK = 7
    INPUT_SHARE = 8
    CLOSE = 9
    BENCH_MULT = 10
    BENCH_TRUNC = 11
    BENCH_RESULT = 12


_C, _P0, _P1 = CLIENT, 0, 1
# allowed (sender, receiver) role pairs per message type
DIRECTIONS: dict[MsgType, frozenset] = {
    MsgType.HELLO: frozenset({(_C, _P0), (_C, _P1), (_P0, _P1)}),
    MsgType.ACK: frozenset({(_P0, _C), (_P1, _C), (_P1, _P0)}),
    MsgType.ERROR: frozenset({(a, b) for a in (_C, _P0, _P1) for b in (_C, _P0, _P1) if a != b}),
    MsgType.SETUP: frozenset({(_C, _P0), (_C, _P1)}),
    MsgType.STEP_BUNDLE: frozenset({(_C, _P0), (_C, _P1)}),
    MsgType.MULT_MASK: frozenset({(_P0, _P1), (_P1, _P0)}),
    MsgType.TRUNC_MASK: frozenset({(_P0, _P1)}),
    MsgType.INPUT_SHARE: frozenset({(_P0, _C), (_P1, _C)}),
    MsgType.CLOSE: frozenset({(_C, _P0), (_C, _P1), (_P0, _P1)}),
    MsgType.BENCH_MULT: frozenset({(_C, _P0), (_C, _P1)}),
    MsgType.BENCH_TRUNC: frozenset({(_C, _P0), (_C, _P1)}),
    MsgType.BENCH_RESULT: frozenset({(_P0, _C), (_P1, _C)}),
}


def direction_allowed(msg_type: MsgType, sender: int, receiver: int) -> bool:
    return (sender, receiver) in DIRECTIONS[msg_type]


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    step: int
    payload: bytes = b""

    def to_bytes(self) -> bytes:
        return HEADER.pack(9 + len(self.payload), int(self.msg_type), self.step) + self.payload

    @classmethod
    def parse_header(cls, head: bytes) -> tuple[int, MsgType, int]:
        """Returns ``(payload_len, type, step)`` from the 13 header bytes."""
        length, t, step = HEADER.unpack(head)
        if length < 9 or length > MAX_FRAME:
            raise FrameError(f"bad frame length {length}")
        try:
            mt = MsgType(t)
        except ValueError:
            raise FrameError(f"unknown message type {t}") from None
        return length - 9, mt, step

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Frame":
        if len(buf) < HEADER.size:
            raise FrameError("short frame")
        plen, mt, step = cls.parse_header(buf[:HEADER.size])
        if len(buf) != HEADER.size + plen:
            raise FrameError("frame length does not match buffer")
        return cls(mt, step, bytes(buf[HEADER.size:]))


# --- session header ----------------------------------------------------------

@dataclass(frozen=True)
class SessionHeader:
    q: int
    n: int
    m: int
    p: int
    k: int
    ell: int
    lam: int
    role: int
    audit: bool = False

    _FIXED = struct.Struct(">4sBBB7I")

    def to_bytes(self) -> bytes:
        qb = self.q.to_bytes((self.q.bit_length() + 7) // 8, "big")
        return self._FIXED.pack(MAGIC, VERSION, self.role, int(self.audit), self.n, self.m,
                                self.p, self.k, self.ell, self.lam, len(qb)) + qb

    @classmethod
    def from_bytes(cls, buf: bytes) -> "SessionHeader":
        fixed = cls._FIXED
        if len(buf) < fixed.size:
            raise FrameError("short session header")
        magic, ver, role, audit, n, m, p, k, ell, lam, qlen = fixed.unpack_from(buf)
        if magic != MAGIC or ver != VERSION:
            raise FrameError("bad magic or version")
        if len(buf) != fixed.size + qlen:
            raise FrameError("session header length mismatch")
        q = int.from_bytes(buf[fixed.size:], "big")
        return cls(q, n, m, p, k, ell, lam, role, bool(audit))

    def mismatches(self, other: "SessionHeader") -> list[str]:
        """Names of fields (other than role) on which the two headers disagree."""
        names = ("q", "n", "m", "p", "k", "ell", "lam", "audit")
        return [f for f in names if getattr(self, f) != getattr(other, f)]


# --- payload codecs --------------------------------------------------------------

def pack_matrices(*mats: ZqMatrix) -> bytes:
    return b"".join(m.to_bytes() for m in mats)


def unpack_matrices(payload: bytes, modulus: Modulus, count: int | None = None) -> list[ZqMatrix]:
    out, off = [], 0
    while off < len(payload) and (count is None or len(out) < count):
        try:
            mat, off = ZqMatrix.from_bytes(payload, modulus, off)
        except ValueError as exc:
            raise FrameError(f"malformed matrix in payload: {exc}") from None
        out.append(mat)
    if off != len(payload) or (count is not None and len(out) != count):
        raise FrameError("payload does not hold the expected matrices")
    return out


def encode_setup(s: PartySetup) -> bytes:
    return pack_matrices(s.phi, s.x0)


def decode_setup(payload: bytes, modulus: Modulus, party: int) -> PartySetup:
    phi, x0 = unpack_matrices(payload, modulus, 2)
    return PartySetup(party, phi, x0)


def encode_step(msg: StepMessage) -> bytes:
    t, r = msg.triple, msg.trunc
    return pack_matrices(msg.y, t.u, t.v, t.w, r.r, r.r_prime)


def decode_step(payload: bytes, modulus: Modulus, step: int, party: int) -> StepMessage:
    y, u, v, w, r, rp = unpack_matrices(payload, modulus, 6)
    return StepMessage(step, party, y, TripleShare(party, u, v, w), TruncShare(party, r, rp))


def encode_mult_mask(msg: MultRound1Msg) -> bytes:
    return pack_matrices(msg.s, msg.t)


def decode_mult_mask(payload: bytes, modulus: Modulus, party: int) -> MultRound1Msg:
    s, t = unpack_matrices(payload, modulus, 2)
    return MultRound1Msg(party, s, t)


def encode_trunc_mask(msg: TruncMaskMsg) -> bytes:
    return pack_matrices(msg.y0)


def decode_trunc_mask(payload: bytes, modulus: Modulus) -> TruncMaskMsg:
    (y0,) = unpack_matrices(payload, modulus, 1)
    return TruncMaskMsg(y0)


def encode_input_share(msg: InputShareMsg) -> bytes:
    if msg.x_next is None:
        return pack_matrices(msg.u)
    return pack_matrices(msg.u, msg.x_next)


def decode_input_share(payload: bytes, modulus: Modulus, step: int, party: int) -> InputShareMsg:
    mats = unpack_matrices(payload, modulus)
    if len(mats) not in (1, 2):
        raise FrameError("input share carries 1 or 2 matrices")
    return InputShareMsg(step, party, mats[0], mats[1] if len(mats) == 2 else None)
