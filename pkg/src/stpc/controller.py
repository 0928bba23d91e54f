"""Secure evaluation of a linear controller ``x+ = Ax + By, u = Cx + Dy``.

The client encodes and shares ``Phi = [[A, B], [C, D]]`` and ``x0`` once, then
each step shares the measurement together with fresh correlated randomness.
Each party multiplies its share of ``Phi`` by its share of ``[x; y]``,
truncates the state block and returns its share of the input block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Protocol

import numpy as np
from sympy import nextprime

from .dealer import Dealer, StepBundle, TripleShare, TruncShare, gen_bundle, trunc_kappa
from .fixedpoint import FixedMatrix, FixedParams, decode, encode, to_rational
from .modring import Modulus, ZqMatrix
from .protocols import MultRound1Msg, MultSession, ProtocolError, TruncMaskMsg, TruncSession
from .rng import RandomSource, make_rng
from .sharing import Share, SharePair, reconst, share, stack_shares


class ControllerError(ValueError):
    pass


class NotSchurStable(ControllerError):
    pass


class SequencingError(ProtocolError):
    pass


# smallest prime above 2^255; pinned so runs are reproducible
DEFAULT_PRIME_256 = 2**255 + 95

# gains of the rotary-pendulum controller (all in Q_{23,16})
PENDULUM_GAINS = (
    "33.022125244140625",
    "-51.49261474609375",
    "0.6586151123046875",
    "-0.7884063720703125",
    "-0.5822296142578125",
)
PENDULUM_C = "2.34"
PENDULUM_GAMMA = "0.59"


# --- modulus sizing ------------------------------------------------------------

def _exact(v) -> Fraction:
    # floats are read through their shortest repr, so 2.34 means 234/100
    if isinstance(v, float):
        return Fraction(repr(v))
    return to_rational(v)


def floor_log2(x: Fraction) -> int:
    """Exact ``floor(log2 x)`` for a positive rational."""
    if x <= 0:
        raise ValueError("log2 of a non-positive number")
    a, b = x.numerator, x.denominator
    e = a.bit_length() - b.bit_length()
    # now 2^(e-1) < a/b < 2^(e+1)
    if (a << max(-e, 0)) < (b << max(e, 0)):
        e -= 1
    return e


def growth_factor_squared(n: int, p: int, c, gamma) -> Fraction:
    """``f(n,p,c,gamma)^2`` with ``f = max(n,p) (1+p) sqrt(n) c / (1-gamma)``."""
    c, gamma = _exact(c), _exact(gamma)
    return Fraction(max(n, p) ** 2 * (1 + p) ** 2 * n) * c * c / ((1 - gamma) ** 2)


def required_modulus_bits(n: int, p: int, k: int, ell: int, lam: int, c, gamma) -> int:
    """Lower bound ``B`` such that ``log2 q >= B`` keeps the encrypted state from overflowing.

    ``B = 3k - ell + lam + 2 + floor(log2 f)``, evaluated exactly. A modulus
    works iff ``q >= 2**B``, i.e. ``q.bit_length() > B``.
    """
    c_, g_ = _exact(c), _exact(gamma)
    if k - ell < 2:
        raise ControllerError("need k - ell >= 2")
    if lam < 1:
        raise ControllerError("need lam >= 1")
    if c_ < 1:
        raise ControllerError("need c >= 1")
    if not (0 < g_ < 1):
        raise ControllerError("need 0 < gamma < 1")
    if n < 1 or p < 1:
        raise ControllerError("dimensions must be positive")
    log2_f = floor_log2(growth_factor_squared(n, p, c_, g_)) // 2
    return 3 * k - ell + lam + 2 + log2_f


def modulus_for_bits(bits: int) -> Modulus:
    """Smallest prime ``q >= 2**bits`` (so ``floor(log2 q) == bits``)."""
    if bits == 255:
        return Modulus(DEFAULT_PRIME_256)
    return Modulus(int(nextprime((1 << bits) - 1)))


def modulus_satisfies(modulus: Modulus, bits: int) -> bool:
    return modulus.log2_floor >= bits


# --- contraction certificate -------------------------------------------------

@dataclass(frozen=True)
class ContractionCert:
    """Constants with ``||A^t||_2 <= c * gamma^t`` checked for ``t <= horizon``."""

    c: float
    gamma: float
    horizon: int


def spectral_radius(A) -> float:
    A = np.asarray(A, dtype=float)
    return float(max(abs(np.linalg.eigvals(A)))) if A.size else 0.0


def verify_contraction(A, c: float, gamma: float, horizon: int, rtol: float = 1e-12) -> bool:
    A = np.asarray(A, dtype=float)
    P = np.eye(A.shape[0])
    bound = float(c)
    for _ in range(horizon + 1):
        if np.linalg.norm(P, 2) > bound * (1 + rtol):
            return False
        P = P @ A
        bound *= gamma
    return True


def estimate_contraction(A, gamma: float | None = None, k: int = 64, ell: int = 32,
                         max_horizon: int = 100_000) -> ContractionCert:
    """Find ``c`` for a given (or default) ``gamma`` by direct matrix powering.

    The default ``gamma`` sits just above the spectral radius. The horizon is
    extended until ``c * gamma^horizon < 2^-(k+ell)``; ``c`` is rounded up to
    three decimals and the result re-checked.
    """
    A = np.asarray(A, dtype=float)
    rho = spectral_radius(A)
    if rho >= 1:
        raise NotSchurStable(f"spectral radius {rho:.6g} >= 1")
    if gamma is None:
        gamma = min(rho * 1.02 + 1e-6, (1 + rho) / 2)
    gamma = float(gamma)
    if not (rho < gamma < 1):
        raise ControllerError(f"gamma must lie in (rho(A), 1) = ({rho:.6g}, 1)")
    target = -(k + ell) * math.log(2)
    c, P, t, horizon = 1.0, np.eye(A.shape[0]), 0, 0
    while True:
        horizon = max(horizon, math.ceil((target - math.log(c)) / math.log(gamma)) + 1)
        if horizon > max_horizon:
            raise ControllerError("contraction horizon too long; pass gamma explicitly")
        while t <= horizon:
            c = max(c, np.linalg.norm(P, 2) / gamma**t)
            P = P @ A
            t += 1
        if c * gamma**horizon < 2.0**-(k + ell):
            break
    c = math.ceil(c * 1000 - 1e-9) / 1000
    if not verify_contraction(A, c, gamma, horizon):
        raise ControllerError("contraction certificate failed verification")
    return ContractionCert(c, gamma, horizon)


# --- controller description ----------------------------------------------------

@dataclass
class ControllerSpec:
    A: FixedMatrix
    B: FixedMatrix
    C: FixedMatrix
    D: FixedMatrix
    x0: FixedMatrix
    k: int
    ell: int
    lam: int
    modulus: Modulus
    c: float | str | None = None
    gamma: float | str | None = None

    @classmethod
    def from_values(cls, A, B, C, D, x0=None, *, k: int = 64, ell: int = 32, lam: int = 80,
                    modulus: Modulus | int | None = None, c=None, gamma=None,
                    validate: bool = True) -> "ControllerSpec":
        """Build from exact values (decimal strings, ints, Fractions or floats)."""
        params = FixedParams(k, ell)
        mats = [FixedMatrix.from_values(np.atleast_2d(np.asarray(M, dtype=object)), params)
                for M in (A, B, C, D)]
        n = mats[0].shape[0]
        x0 = FixedMatrix.from_values(np.zeros((n, 1), dtype=int) if x0 is None
                                     else np.asarray(x0, dtype=object).reshape(-1, 1), params)
        if modulus is None:
            modulus = Modulus(DEFAULT_PRIME_256)
        elif not isinstance(modulus, Modulus):
            modulus = Modulus(int(modulus))
        spec = cls(*mats, x0, k, ell, lam, modulus, c, gamma)
        if validate:
            spec.validate()
        return spec

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def params(self) -> FixedParams:
        return FixedParams(self.k, self.ell)

    @property
    def kappa(self) -> int:
        return trunc_kappa(self.modulus, self.lam)

    def phi_ints(self) -> np.ndarray:
        """``2^ell * [[A, B], [C, D]]`` as integers."""
        top = np.hstack([self.A.ints, self.B.ints])
        bottom = np.hstack([self.C.ints, self.D.ints])
        return np.vstack([top, bottom])

    def contraction(self) -> tuple:
        """``(c, gamma)``: the configured pair, or an estimate from ``A``."""
        if self.c is not None and self.gamma is not None:
            return self.c, self.gamma
        cert = estimate_contraction(self.A.to_float(), self.gamma and float(self.gamma),
                                    self.k, self.ell)
        return cert.c, cert.gamma

    def required_bits(self) -> int:
        c, gamma = self.contraction()
        return required_modulus_bits(self.n, self.p, self.k, self.ell, self.lam, c, gamma)

    def validate(self) -> None:
        n, m, p = self.n, self.m, self.p
        if self.A.shape != (n, n) or self.B.shape != (n, p) or self.C.shape != (m, n) \
                or self.D.shape != (m, p) or self.x0.shape != (n, 1):
            raise ControllerError("inconsistent controller dimensions")
        if self.k - self.ell < 2:
            raise ControllerError("need k - ell >= 2")
        for M in (self.A, self.B, self.C, self.D, self.x0):
            if M.params != self.params:
                raise ControllerError("controller matrices must all be in Q_{k,ell}")
        if spectral_radius(self.A.to_float()) >= 1:
            raise NotSchurStable("state matrix A is not Schur stable")
        bits = self.required_bits()
        if not modulus_satisfies(self.modulus, bits):
            raise ControllerError(
                f"modulus has floor(log2 q) = {self.modulus.log2_floor}, need >= {bits}"
            )


def pendulum_controller(k: int = 64, ell: int = 32, lam: int = 80,
                        modulus: Modulus | int | None = None) -> ControllerSpec:
    """Pseudo-differentiator plus state feedback controller for a rotary pendulum.

    ``n=3`` states, ``m=1`` input, ``p=2`` measurements (arm and pendulum angle).
    """
    k1, k2, k3, k4, k5 = PENDULUM_GAINS
    A = [[0, 0, 0], [0, 0, 0], [k3, k4, k5]]
    B = [[-50, 0], [0, -50], [k1, k2]]
    C = [[k3, k4, k5]]
    D = [[k1, k2]]
    return ControllerSpec.from_values(A, B, C, D, None, k=k, ell=ell, lam=lam,
                                      modulus=modulus, c=PENDULUM_C, gamma=PENDULUM_GAMMA)


# --- messages ------------------------------------------------------------------

@dataclass(frozen=True)
class PartySetup:
    """Offline material for one party: its shares of the encoded ``Phi`` and ``x0``."""

    party: int
    phi: ZqMatrix
    x0: ZqMatrix


@dataclass(frozen=True)
class StepMessage:
    """Client to party, once per step: measurement share plus randomness shares."""

    step: int
    party: int
    y: ZqMatrix
    triple: TripleShare
    trunc: TruncShare


@dataclass(frozen=True)
class InputShareMsg:
    """Party to client: share of the encoded input; ``x_next`` only in audit mode."""

    step: int
    party: int
    u: ZqMatrix
    x_next: ZqMatrix | None = None


def offline_setup(spec: ControllerSpec, rng: RandomSource) -> tuple[PartySetup, PartySetup]:
    phi = share(ZqMatrix(spec.phi_ints(), spec.modulus), rng)
    x0 = share(ZqMatrix(spec.x0.ints, spec.modulus), rng)
    return PartySetup(0, phi.s0.value, x0.s0.value), PartySetup(1, phi.s1.value, x0.s1.value)


def encode_measurement(y_t, spec: ControllerSpec) -> np.ndarray:
    """Encode ``y_t`` at ``spec.ell`` fractional bits; must land in Q_{k,ell}."""
    y = np.asarray(y_t.values() if isinstance(y_t, FixedMatrix) else y_t, dtype=object)
    y = y.reshape(-1, 1)
    if y.shape[0] != spec.p:
        raise ControllerError(f"measurement has {y.shape[0]} entries, expected {spec.p}")
    return encode(y, spec.ell, spec.k)


def client_step_begin(y_t, spec: ControllerSpec, rng: RandomSource, *, step: int = 0,
                      bundle: StepBundle | None = None) -> tuple[StepMessage, StepMessage]:
    ybar = encode_measurement(y_t, spec)
    ys = share(ZqMatrix(ybar, spec.modulus), rng)
    if bundle is None:
        bundle = gen_bundle(spec, rng, step)
    return tuple(
        StepMessage(step, i, ys[i].value, bundle.triple.component(i), bundle.trunc.component(i))
        for i in (0, 1)
    )


def reconstruct_input(a: InputShareMsg, b: InputShareMsg) -> np.ndarray:
    if a.step != b.step:
        raise SequencingError(f"input shares for different steps ({a.step} vs {b.step})")
    if {a.party, b.party} != {0, 1}:
        raise ControllerError("need one input share from each party")
    return reconst(SharePair.of(*(m.u for m in sorted((a, b), key=lambda m: m.party)))).data


def client_step_end(a: InputShareMsg, b: InputShareMsg, ell: int) -> np.ndarray:
    """Exact control input (column of Fractions) decoded at ``2 * ell`` bits."""
    return decode(reconstruct_input(a, b), 2 * ell)


# --- party side ------------------------------------------------------------------

class Channel(Protocol):
    def send(self, msg) -> None: ...

    def recv(self): ...


class ControllerParty:
    """Sans-IO state machine for one party across the whole session.

    A step goes ``begin`` -> ``on_mult_mask`` -> (party 1 only) ``on_trunc_mask``
    -> ``finish``. The next step cannot start until ``finish`` has committed
    the new state share.
    """

    def __init__(self, party: int, ell: int, lam: int, audit: bool = False):
        if party not in (0, 1):
            raise ValueError("party must be 0 or 1")
        self.party = party
        self.ell = ell
        self.lam = lam
        self.audit = audit
        self.phi: Share | None = None
        self.state: Share | None = None
        self.n = 0
        self.step = 0
        self._mult: MultSession | None = None
        self._trunc: TruncSession | None = None
        self._u: Share | None = None
        self._msg_step: int | None = None

    def install(self, setup: PartySetup) -> None:
        if setup.party != self.party:
            raise ControllerError("setup addressed to the other party")
        if self.phi is not None:
            raise SequencingError("setup already installed")
        self.phi = Share(self.party, setup.phi)
        self.state = Share(self.party, setup.x0)
        self.n = setup.x0.rows

    @property
    def in_step(self) -> bool:
        return self._mult is not None

    def begin(self, msg: StepMessage) -> MultRound1Msg:
        if self.phi is None:
            raise SequencingError("no offline setup installed")
        if self.in_step:
            raise SequencingError(f"step {self.step} still in progress")
        if msg.step != self.step or msg.party != self.party:
            raise SequencingError(f"expected step {self.step} for party {self.party}, "
                                  f"got step {msg.step} for party {msg.party}")
        xi = stack_shares([self.state, Share(self.party, msg.y)])
        self._mult = MultSession(self.party, self.phi, xi, msg.triple)
        self._trunc_pair = msg.trunc
        self._msg_step = msg.step
        return self._mult.outgoing()

    def on_mult_mask(self, peer: MultRound1Msg) -> TruncMaskMsg | None:
        if self._mult is None or self._mult.result is not None:
            raise SequencingError("unexpected multiplication mask")
        psi = self._mult.receive(peer)
        x_tilde = Share(self.party, psi.value.row_slice(0, self.n))
        self._u = Share(self.party, psi.value.row_slice(self.n, psi.value.rows))
        self._trunc = TruncSession(self.party, x_tilde, self._trunc_pair, self.ell, self.lam)
        return self._trunc.outgoing()

    def on_trunc_mask(self, msg: TruncMaskMsg) -> None:
        if self._trunc is None or self._trunc.result is not None:
            raise SequencingError("unexpected truncation mask")
        self._trunc.receive(msg)

    @property
    def step_complete(self) -> bool:
        return self._trunc is not None and self._trunc.result is not None

    def finish(self) -> InputShareMsg:
        if not self.step_complete:
            raise SequencingError("step not complete")
        self.state = self._trunc.result
        out = InputShareMsg(self._msg_step, self.party, self._u.value,
                            self.state.value if self.audit else None)
        self._mult = self._trunc = self._u = None
        self.step += 1
        return out


def party_step(party: ControllerParty, msg: StepMessage, peer: Channel) -> InputShareMsg:
    """Run one full step for ``party``, talking to the other party through ``peer``."""
    peer.send(party.begin(msg))
    out = party.on_mult_mask(peer.recv())
    if out is not None:
        peer.send(out)
    if party.party == 1:
        party.on_trunc_mask(peer.recv())
    return party.finish()


# --- client side -----------------------------------------------------------------

class ControllerClient:
    """Client endpoint: encodes, shares, deals randomness and decodes inputs.

    Uses two independent random streams (one for sharing data, one for the
    dealer), so prefetching bundles never changes the values produced.
    """

    def __init__(self, spec: ControllerSpec, seed=None, prefetch: int = 0):
        self.spec = spec
        self.rng = make_rng(seed, "client")
        self.dealer = Dealer(spec, make_rng(seed, "dealer"), prefetch)
        self.step = 0
        self.setup_done = False

    def setup(self) -> tuple[PartySetup, PartySetup]:
        if self.setup_done:
            raise SequencingError("setup already performed")
        self.setup_done = True
        return offline_setup(self.spec, self.rng)

    def begin(self, y_t) -> tuple[StepMessage, StepMessage]:
        if not self.setup_done:
            raise SequencingError("setup must precede the first step")
        msgs = client_step_begin(y_t, self.spec, self.rng, step=self.step,
                                 bundle=self.dealer.next_bundle())
        return msgs

    def end(self, a: InputShareMsg, b: InputShareMsg) -> np.ndarray:
        if a.step != self.step or b.step != self.step:
            raise SequencingError(f"expected input shares for step {self.step}")
        u = client_step_end(a, b, self.spec.ell)
        self.step += 1
        return u

    def close(self) -> None:
        self.dealer.close()


@dataclass
class StepRecord:
    step: int
    u: np.ndarray                  # exact inputs (Fractions), 2*ell fractional bits
    u_bar: np.ndarray              # encoded input integers
    shares: tuple                  # the two InputShareMsg
    x_bar_next: np.ndarray | None = None   # audit only: reconstructed encoded state


@dataclass
class InProcessSession:
    """Client and both parties in one process, exchanging messages directly."""

    spec: ControllerSpec
    seed: object = None
    prefetch: int = 0
    audit: bool = True
    client: ControllerClient = field(init=False)
    parties: tuple = field(init=False)

    def __post_init__(self):
        self.client = ControllerClient(self.spec, self.seed, self.prefetch)
        self.parties = tuple(ControllerParty(i, self.spec.ell, self.spec.lam, self.audit)
                             for i in (0, 1))
        for party, setup in zip(self.parties, self.client.setup()):
            party.install(setup)

    def step(self, y_t) -> StepRecord:
        m0, m1 = self.client.begin(y_t)
        p0, p1 = self.parties
        a0, a1 = p0.begin(m0), p1.begin(m1)
        t0 = p0.on_mult_mask(a1)
        p1.on_mult_mask(a0)
        p1.on_trunc_mask(t0)
        o0, o1 = p0.finish(), p1.finish()
        step = self.client.step
        u_bar = reconstruct_input(o0, o1)
        u = self.client.end(o0, o1)
        x_next = None
        if self.audit:
            x_next = reconst(SharePair.of(o0.x_next, o1.x_next)).data
        return StepRecord(step, u, u_bar, (o0, o1), x_next)

    def close(self) -> None:
        self.client.close()
