"""Exact arithmetic in the centered residue ring Z_q = Z ∩ [-q/2, q/2).

Matrices are numpy arrays of dtype ``object`` holding Python ints, so the
arithmetic is exact at any modulus size. Values are kept in centered form
everywhere; the canonical ``[0, q)`` form only appears in the byte encoding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from sympy import isprime

from .rng import RandomSource


class ModulusError(ValueError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Modulus:
    """An odd prime modulus, checked once at construction."""

    q: int
    bit_len: int = field(init=False)
    byte_width: int = field(init=False)

    def __post_init__(self):
        q = int(self.q)
        if q < 3 or q % 2 == 0:
            raise ModulusError(f"modulus must be an odd prime >= 3, got {q}")
        # sympy's BPSW test has no known pseudoprimes
        if not isprime(q):
            raise ModulusError(f"modulus {q} is not prime")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "bit_len", q.bit_length())
        object.__setattr__(self, "byte_width", (q.bit_length() + 7) // 8)

    def __int__(self) -> int:
        return self.q

    @property
    def log2_floor(self) -> int:
        return self.bit_len - 1

    def __repr__(self) -> str:
        return f"Modulus({self.bit_len}-bit, q={self.q})"


def _qint(q: int | Modulus) -> int:
    return q.q if isinstance(q, Modulus) else int(q)


def reduce_centered(z, q: int | Modulus):
    """Return ``z - floor((z + q/2) / q) * q``.

    Works for any integer modulus ``q >= 2`` (including powers of two), on
    scalars and on object arrays elementwise.
    """
    qi = _qint(q)
    # floor((z + q/2)/q) == floor((2z + q)/(2q)) keeps everything integral
    return z - ((2 * z + qi) // (2 * qi)) * qi


def inv_pow2(ell: int, q: int | Modulus) -> int:
    """Centered inverse of ``2**ell`` modulo an odd ``q``."""
    qi = _qint(q)
    return reduce_centered(pow(2, -ell, qi), qi)


def as_object_array(values, ndim: int = 2) -> np.ndarray:
    arr = np.array(values, dtype=object)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1 and ndim == 2:
        arr = arr.reshape(-1, 1)
    # np.array(dtype=object) keeps numpy ints / bools as-is; force Python ints
    return np.vectorize(int, otypes=[object])(arr) if arr.size else arr


class ZqMatrix:
    """Matrix over Z_q stored as centered Python integers (row-major)."""

    __slots__ = ("data", "modulus")

    def __init__(self, data, modulus: Modulus, *, reduce: bool = True):
        if isinstance(data, np.ndarray) and data.dtype == object and data.ndim == 2:
            arr = data
        else:
            arr = as_object_array(data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
        if reduce:
            arr = reduce_centered(arr, modulus.q)
        else:
            lo, hi = -modulus.q, modulus.q
            if any(not (lo <= 2 * int(e) < hi) for e in arr.flat):
                raise ModulusError("entry outside [-q/2, q/2)")
        self.data = arr
        self.modulus = modulus

    # construction helpers -------------------------------------------------

    @classmethod
    def _trusted(cls, arr: np.ndarray, modulus: Modulus) -> "ZqMatrix":
        # arr is already a centered 2-D object array
        obj = object.__new__(cls)
        obj.data = arr
        obj.modulus = modulus
        return obj

    @classmethod
    def zeros(cls, rows: int, cols: int, modulus: Modulus) -> "ZqMatrix":
        return cls._trusted(np.zeros((rows, cols), dtype=object) * 0, modulus)

    @classmethod
    def identity(cls, n: int, modulus: Modulus) -> "ZqMatrix":
        arr = np.zeros((n, n), dtype=object)
        for i in range(n):
            arr[i, i] = 1
        return cls(arr, modulus)

    @classmethod
    def full(cls, rows: int, cols: int, value: int, modulus: Modulus) -> "ZqMatrix":
        arr = np.empty((rows, cols), dtype=object)
        arr.fill(int(value))
        return cls(arr, modulus)

    # basic properties -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def tolist(self) -> list[list[int]]:
        return [[int(v) for v in row] for row in self.data]

    def __repr__(self) -> str:
        return f"ZqMatrix({self.tolist()!r}, q~2^{self.modulus.log2_floor})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, ZqMatrix):
            return NotImplemented
        return (
            self.modulus == other.modulus
            and self.shape == other.shape
            and bool(np.all(self.data == other.data))
        )

    __hash__ = None

    # arithmetic -----------------------------------------------------------

    def _check_same(self, other: "ZqMatrix") -> None:
        if self.modulus != other.modulus:
            raise ModulusError("modulus mismatch")
        if self.shape != other.shape:
            raise DimensionError(f"shape mismatch {self.shape} vs {other.shape}")

    def __add__(self, other: "ZqMatrix") -> "ZqMatrix":
        return mat_add(self, other)

    def __sub__(self, other: "ZqMatrix") -> "ZqMatrix":
        return mat_sub(self, other)

    def __neg__(self) -> "ZqMatrix":
        return ZqMatrix(-self.data, self.modulus)

    def __matmul__(self, other: "ZqMatrix") -> "ZqMatrix":
        return mat_mul(self, other)

    def __mul__(self, k: int) -> "ZqMatrix":
        return scalar_mul(k, self)

    __rmul__ = __mul__

    # block helpers --------------------------------------------------------

    def row_slice(self, start: int, stop: int) -> "ZqMatrix":
        return ZqMatrix._trusted(self.data[start:stop, :], self.modulus)

    def to_canonical(self) -> np.ndarray:
        return self.data % self.modulus.q

    # serialization --------------------------------------------------------

    def to_bytes(self) -> bytes:
        """Two 4-byte big-endian dims, then row-major fixed-width canonical residues."""
        w, q = self.modulus.byte_width, self.modulus.q
        body = b"".join((int(v) % q).to_bytes(w, "big") for v in self.data.flat)
        return struct.pack(">II", self.rows, self.cols) + body

    @classmethod
    def from_bytes(cls, buf: bytes, modulus: Modulus, offset: int = 0) -> tuple["ZqMatrix", int]:
        """Decode one matrix at ``offset``; returns ``(matrix, next_offset)``."""
        if len(buf) - offset < 8:
            raise ValueError("truncated matrix header")
        rows, cols = struct.unpack_from(">II", buf, offset)
        offset += 8
        w, q = modulus.byte_width, modulus.q
        end = offset + rows * cols * w
        if rows == 0 or cols == 0 or end > len(buf):
            raise ValueError("truncated or empty matrix payload")
        vals = []
        for pos in range(offset, end, w):
            v = int.from_bytes(buf[pos:pos + w], "big")
            if v >= q:
                raise ModulusError("non-canonical residue on the wire")
            vals.append(v)
        arr = np.empty(rows * cols, dtype=object)
        arr[:] = vals
        return cls(arr.reshape(rows, cols), modulus), end


def mat_add(x: ZqMatrix, y: ZqMatrix) -> ZqMatrix:
    x._check_same(y)
    return ZqMatrix(x.data + y.data, x.modulus)


def mat_sub(x: ZqMatrix, y: ZqMatrix) -> ZqMatrix:
    x._check_same(y)
    return ZqMatrix(x.data - y.data, x.modulus)


def scalar_mul(k: int, x: ZqMatrix) -> ZqMatrix:
    return ZqMatrix(x.data * int(k), x.modulus)


def mat_mul(x: ZqMatrix, y: ZqMatrix) -> ZqMatrix:
    if x.modulus != y.modulus:
        raise ModulusError("modulus mismatch")
    if x.cols != y.rows:
        raise DimensionError(f"cannot multiply {x.shape} by {y.shape}")
    return ZqMatrix(x.data.dot(y.data), x.modulus)


def vstack(blocks: Iterable[ZqMatrix]) -> ZqMatrix:
    blocks = list(blocks)
    mod = blocks[0].modulus
    if any(b.modulus != mod for b in blocks):
        raise ModulusError("modulus mismatch")
    if len({b.cols for b in blocks}) != 1:
        raise DimensionError("column mismatch in vstack")
    return ZqMatrix._trusted(np.vstack([b.data for b in blocks]), mod)


def _uniform_below(count: int, bound: int, rng: RandomSource) -> list[int]:
    """``count`` integers uniform on ``[0, bound)`` by masked rejection sampling."""
    nbits = (bound - 1).bit_length() or 1
    width = (nbits + 7) // 8
    mask = (1 << nbits) - 1
    out: list[int] = []
    while len(out) < count:
        need = count - len(out)
        # acceptance is > 1/2 after masking, so ask for a bit extra
        buf = rng.randbytes((need + need // 2 + 1) * width)
        for pos in range(0, len(buf), width):
            v = int.from_bytes(buf[pos:pos + width], "big") & mask
            if v < bound:
                out.append(v)
                if len(out) == count:
                    break
    return out


def sample_uniform(rows: int, cols: int, modulus: Modulus, rng: RandomSource) -> ZqMatrix:
    """Matrix with entries independent and uniform over the ``q`` residues."""
    vals = _uniform_below(rows * cols, modulus.q, rng)
    arr = np.empty(rows * cols, dtype=object)
    arr[:] = vals
    return ZqMatrix(arr.reshape(rows, cols), modulus)


def sample_signed(rows: int, cols: int, bits: int, rng: RandomSource) -> np.ndarray:
    """Integers uniform over ``{-2^(bits-1), ..., 2^(bits-1) - 1}`` (object array)."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    half = 1 << (bits - 1)
    vals = _uniform_below(rows * cols, 1 << bits, rng)
    arr = np.empty(rows * cols, dtype=object)
    arr[:] = [v - half for v in vals]
    return arr.reshape(rows, cols)
