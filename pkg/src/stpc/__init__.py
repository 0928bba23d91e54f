"""Two-party additive secret sharing for a linear dynamic controller."""

from .controller import (
    ControllerSpec,
    InProcessSession,
    pendulum_controller,
    required_modulus_bits,
)
from .fixedpoint import FixedMatrix, FixedParams, decode, encode
from .modring import Modulus, ZqMatrix
from .sharing import SharePair, reconst, share

__version__ = "0.1.0"

__all__ = [
    "ControllerSpec",
    "FixedMatrix",
    "FixedParams",
    "InProcessSession",
    "Modulus",
    "SharePair",
    "ZqMatrix",
    "decode",
    "encode",
    "pendulum_controller",
    "reconst",
    "required_modulus_bits",
    "share",
]
