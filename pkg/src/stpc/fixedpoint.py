"""Fixed-point sets Q_{k,l} and the scaling encoder/decoder.

A value in Q_{k,l} is ``z * 2**-l`` with ``z`` a signed k-bit integer. Values
are held as the exact integer ``z``; binary floating point never crosses the
protocol boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from numbers import Rational

import numpy as np


class FixedPointError(ValueError):
    """A value is not representable in the requested fixed-point set."""


def int_range(bits: int) -> tuple[int, int]:
    """Inclusive bounds of the signed ``bits``-bit integers."""
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


def in_int_range(z: int, bits: int) -> bool:
    lo, hi = int_range(bits)
    return lo <= z <= hi


def to_rational(v) -> Fraction:
    """Exact rational value of ``v``; floats are taken at their exact binary value."""
    if isinstance(v, Fraction):
        return v
    if isinstance(v, (bool, np.bool_)):
        raise TypeError("booleans are not numbers here")
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    if isinstance(v, (float, np.floating)):
        if not np.isfinite(v):
            raise FixedPointError(f"non-finite value {v!r}")
        return Fraction(float(v))
    if isinstance(v, (str, Decimal, Rational)):
        return Fraction(v.strip() if isinstance(v, str) else v)
    raise TypeError(f"cannot interpret {v!r} as a rational number")


@dataclass(frozen=True)
class FixedParams:
    k: int
    ell: int

    def __post_init__(self):
        if not (self.k > self.ell >= 0):
            raise FixedPointError(f"need k > ell >= 0, got k={self.k}, ell={self.ell}")

    @property
    def int_range(self) -> tuple[int, int]:
        return int_range(self.k)


def _encode_one(v, ell: int, k: int | None) -> int:
    scaled = to_rational(v) * (1 << ell)
    if scaled.denominator != 1:
        raise FixedPointError(f"{v!r} has more than {ell} fractional bits")
    z = scaled.numerator
    if k is not None and not in_int_range(z, k):
        raise FixedPointError(f"{v!r} overflows Q_{{{k},{ell}}}")
    return z


def encode(X, ell: int, k: int | None = None):
    """``2**ell * X`` as exact integers.

    Accepts a scalar, any nested sequence / array, or a :class:`FixedMatrix`.
    With ``k`` given, every result must lie in the signed k-bit range.
    """
    if isinstance(X, FixedMatrix):
        shift = ell - X.params.ell
        if shift >= 0:
            out = X.ints * (1 << shift)
        else:
            out = np.vectorize(lambda z: _encode_one(Fraction(z, 1 << X.params.ell), ell, None),
                               otypes=[object])(X.ints)
        if k is not None and any(not in_int_range(int(z), k) for z in out.flat):
            raise FixedPointError(f"value overflows Q_{{{k},{ell}}}")
        return out
    arr = np.asarray(X, dtype=object)
    if arr.ndim == 0:
        return _encode_one(arr.item(), ell, k)
    return np.vectorize(lambda v: _encode_one(v, ell, k), otypes=[object])(arr)


def decode(Xbar, ell: int):
    """Exact rationals ``2**-ell * Xbar`` (scalar in, scalar out)."""
    scale = Fraction(1, 1 << ell)
    arr = np.asarray(Xbar, dtype=object)
    if arr.ndim == 0:
        return int(arr.item()) * scale
    return np.vectorize(lambda z: int(z) * scale, otypes=[object])(arr)


def validate_membership(X, k: int, ell: int) -> bool:
    """True iff every entry is ``z * 2**-ell`` with ``z`` a signed k-bit integer."""
    try:
        encode(X, ell, k)
    except FixedPointError:
        return False
    return True


def quantize(X, k: int, ell: int) -> np.ndarray:
    """Round to the nearest point of Q_{k,l} and saturate. Never applied implicitly."""
    lo, hi = int_range(k)
    arr = np.asarray(X, dtype=object)

    def q1(v):
        z = to_rational(v) * (1 << ell)
        z = (z + Fraction(1, 2)).__floor__()
        return Fraction(min(max(z, lo), hi), 1 << ell)

    if arr.ndim == 0:
        return q1(arr.item())
    return np.vectorize(q1, otypes=[object])(arr)


class FixedMatrix:
    """Matrix over Q_{k,l}, stored as the integers ``z`` with value ``z * 2**-l``."""

    __slots__ = ("params", "ints")

    def __init__(self, ints, params: FixedParams):
        arr = np.asarray(ints, dtype=object)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        arr = np.vectorize(int, otypes=[object])(arr)
        lo, hi = params.int_range
        if any(not (lo <= z <= hi) for z in arr.flat):
            raise FixedPointError(f"integer outside the {params.k}-bit range")
        self.params = params
        self.ints = arr

    @classmethod
    def from_values(cls, values, params: FixedParams) -> "FixedMatrix":
        """Parse exact values (decimal strings, ints, Fractions, floats); rejects non-members."""
        arr = np.asarray(values, dtype=object)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        return cls(encode(arr, params.ell, params.k), params)

    @property
    def shape(self) -> tuple[int, int]:
        return self.ints.shape

    def values(self) -> np.ndarray:
        return decode(self.ints, self.params.ell)

    def to_float(self) -> np.ndarray:
        return np.array([[float(v) for v in row] for row in self.values()], dtype=float)

    def to_strings(self) -> list[list[str]]:
        """Exact decimal strings (dyadic rationals always terminate)."""
        return [[dyadic_to_str(v) for v in row] for row in self.values()]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FixedMatrix):
            return NotImplemented
        return self.shape == other.shape and bool(np.all(self.values() == other.values()))

    __hash__ = None

    def __repr__(self) -> str:
        return f"FixedMatrix({self.to_strings()}, k={self.params.k}, ell={self.params.ell})"


def dyadic_to_str(v: Fraction) -> str:
    """Exact decimal expansion of a dyadic rational."""
    v = to_rational(v)
    den = v.denominator
    shift = den.bit_length() - 1
    if den != 1 << shift:
        raise FixedPointError(f"{v} is not dyadic")
    if shift == 0:
        return str(v.numerator)
    # v = num / 2^s = num * 5^s / 10^s
    digits = abs(v.numerator) * 5**shift
    s = str(digits).rjust(shift + 1, "0")
    out = s[:-shift] + "." + s[-shift:].rstrip("0")
    return ("-" if v < 0 else "") + out
