"""Client endpoint: drives the offline phase and the sampled online loop."""

from __future__ import annotations

import logging
import socket
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..controller import (
    ControllerClient,
    ControllerSpec,
    InputShareMsg,
    reconstruct_input,
)
from ..dealer import gen_triple, gen_trunc_pair
from ..modring import ZqMatrix, sample_signed, sample_uniform
from ..rng import RandomSource
from ..sharing import SharePair, reconst, share
from . import wire
from .config import SessionConfig
from .transport import Connection, SessionAborted, SocketWrapper, handshake_dial
from .wire import CLIENT, MsgType

log = logging.getLogger(__name__)


class StepTimeout(TimeoutError):
    pass


@dataclass
class ClientStep:
    step: int
    y: np.ndarray
    u: np.ndarray | None          # exact input (Fractions); None if the step timed out
    u_bar: np.ndarray | None
    shares: tuple | None
    rtt_s: float
    x_bar_next: np.ndarray | None = None
    timed_out: bool = False


class NetworkClient:
    def __init__(self, cfg: SessionConfig, spec: ControllerSpec | None = None, seed=None,
                 prefetch: int = 0, wrap: SocketWrapper | None = None):
        self.cfg = cfg
        self.spec = spec or cfg.controller_spec()
        self.modulus = self.spec.modulus
        self.core = ControllerClient(self.spec, seed, prefetch)
        self.wrap = wrap
        self.conns: list[Connection] = []
        self._bench_step = 0
        self._last_u: np.ndarray | None = None

    # connection management ----------------------------------------------------

    def connect(self, connect_timeout: float | None = None) -> None:
        deadline = time.monotonic() + (connect_timeout or self.cfg.timeout_s)
        header = self.cfg.header(CLIENT)
        for i in (0, 1):
            conn = Connection.dial(self.cfg.parties[i], CLIENT, i, self.cfg.timeout_s,
                                   self.wrap, retry_until=deadline)
            handshake_dial(conn, header)
            self.conns.append(conn)

    def setup(self) -> None:
        for conn, s in zip(self.conns, self.core.setup()):
            conn.send(MsgType.SETUP, 0, wire.encode_setup(s))

    def close(self) -> None:
        for conn in self.conns:
            try:
                conn.send(MsgType.CLOSE, self.core.step)
            except (OSError, ConnectionError):
                pass
            conn.close()
        self.conns = []
        self.core.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # online loop --------------------------------------------------------------

    def _recv_input(self, i: int, step: int) -> InputShareMsg:
        conn = self.conns[i]
        while True:
            frame = conn.recv(MsgType.INPUT_SHARE)
            if frame.step < step:
                log.warning("discarding late input share from party %d for step %d", i, frame.step)
                continue
            if frame.step != step:
                raise SessionAborted(f"party {i} answered step {frame.step}, expected {step}")
            return wire.decode_input_share(frame.payload, self.modulus, frame.step, i)

    def step(self, y_t) -> ClientStep:
        step = self.core.step
        msgs = self.core.begin(y_t)
        y = np.asarray(y_t, dtype=object).reshape(-1, 1)
        t0 = time.perf_counter()
        for conn, msg in zip(self.conns, msgs):
            conn.send(MsgType.STEP_BUNDLE, step, wire.encode_step(msg))
        try:
            o0 = self._recv_input(0, step)
            o1 = self._recv_input(1, step)
        except socket.timeout:
            rtt = time.perf_counter() - t0
            if self.cfg.on_timeout == "abort":
                raise StepTimeout(f"no input shares for step {step} within {self.cfg.timeout_s}s")
            self.core.step += 1
            return ClientStep(step, y, self._last_u, None, None, rtt, timed_out=True)
        rtt = time.perf_counter() - t0
        u_bar = reconstruct_input(o0, o1)
        u = self.core.end(o0, o1)
        self._last_u = u
        x_next = None
        if o0.x_next is not None and o1.x_next is not None:
            x_next = reconst(SharePair.of(o0.x_next, o1.x_next)).data
        return ClientStep(step, y, u, u_bar, (o0, o1), rtt, x_next)

    # subprotocol benchmarks ------------------------------------------------------

    def _bench_roundtrip(self, mt: MsgType, payloads: tuple[bytes, bytes]) -> tuple[float, SharePair]:
        step = self._bench_step
        t0 = time.perf_counter()
        for conn, payload in zip(self.conns, payloads):
            conn.send(mt, step, payload)
        outs = []
        for i, conn in enumerate(self.conns):
            frame = conn.recv(MsgType.BENCH_RESULT, step=step)
            (z,) = wire.unpack_matrices(frame.payload, self.modulus, 1)
            outs.append(z)
        elapsed = time.perf_counter() - t0
        self._bench_step += 1
        return elapsed, SharePair.of(*outs)

    def bench_mult(self, d1: int, d2: int, d3: int, rng: RandomSource) -> tuple[float, SharePair]:
        """Time one remote multiplication of random shared matrices (client send to last receive)."""
        q = self.modulus
        xs = share(sample_uniform(d1, d2, q, rng), rng)
        ys = share(sample_uniform(d2, d3, q, rng), rng)
        t = gen_triple(d1, d2, d3, q, rng)
        payloads = tuple(
            wire.pack_matrices(xs[i].value, ys[i].value, t.u[i].value, t.v[i].value, t.w[i].value)
            for i in (0, 1)
        )
        return self._bench_roundtrip(MsgType.BENCH_MULT, payloads)

    def bench_trunc(self, d1: int, d2: int, rng: RandomSource) -> tuple[float, SharePair]:
        q, spec = self.modulus, self.spec
        xs = share(ZqMatrix(sample_signed(d1, d2, spec.kappa, rng), q), rng)
        pair = gen_trunc_pair(d1, d2, q, spec.ell, spec.lam, rng)
        payloads = tuple(
            wire.pack_matrices(xs[i].value, pair.r[i].value, pair.r_prime[i].value)
            for i in (0, 1)
        )
        return self._bench_roundtrip(MsgType.BENCH_TRUNC, payloads)


def client_session(cfg: SessionConfig, source: Callable[[int, np.ndarray | None], object],
                   steps: int, *, spec: ControllerSpec | None = None, seed=None,
                   period_s: float | None = None, prefetch: int = 0,
                   on_step: Callable[[ClientStep], None] | None = None) -> list[ClientStep]:
    """Connect, run the offline phase, then ``steps`` sampled steps.

    ``source(t, last_u)`` returns the measurement for step ``t``. Steps are
    paced on a monotonic clock at ``period_s`` (default: the configured
    period); pass ``0`` to run back to back.
    """
    period = cfg.period_ms / 1000 if period_s is None else period_s
    records: list[ClientStep] = []
    with NetworkClient(cfg, spec, seed, prefetch) as client:
        client.connect()
        client.setup()
        last_u = None
        next_tick = time.monotonic()
        for t in range(steps):
            if period > 0:
                delay = next_tick - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                next_tick += period
            rec = client.step(source(t, last_u))
            if rec.u is not None:
                last_u = rec.u
            records.append(rec)
            if on_step is not None:
                on_step(rec)
    return records

