"""Party server: one session, strictly sequential."""

from __future__ import annotations

import logging
import select
import socket
import time
from dataclasses import dataclass, field

from ..controller import ControllerParty, party_step
from ..dealer import TripleShare, TruncShare
from ..modring import Modulus
from ..protocols import MultRound1Msg, MultSession, ProtocolError, TruncMaskMsg, TruncSession
from ..sharing import Share
from . import wire
from .config import SessionConfig
from .transport import (
    Connection,
    FrameRecord,
    SessionAborted,
    SocketWrapper,
    handshake_accept,
    handshake_dial,
    parse_address,
)
from .wire import CLIENT, MsgType

log = logging.getLogger(__name__)


class PeerChannel:
    """Carries the inter-party protocol messages of one step over a connection."""

    def __init__(self, conn: Connection, party: int, modulus: Modulus, step: int):
        self.conn = conn
        self.party = party
        self.modulus = modulus
        self.step = step

    def send(self, msg) -> None:
        if isinstance(msg, MultRound1Msg):
            self.conn.send(MsgType.MULT_MASK, self.step, wire.encode_mult_mask(msg))
        elif isinstance(msg, TruncMaskMsg):
            self.conn.send(MsgType.TRUNC_MASK, self.step, wire.encode_trunc_mask(msg))
        else:
            raise TypeError(f"cannot send {type(msg).__name__} to the peer")

    def recv(self):
        frame = self.conn.recv((MsgType.MULT_MASK, MsgType.TRUNC_MASK), step=self.step)
        if frame.msg_type is MsgType.MULT_MASK:
            return wire.decode_mult_mask(frame.payload, self.modulus, 1 - self.party)
        return wire.decode_trunc_mask(frame.payload, self.modulus)


@dataclass
class PartyReport:
    party: int
    steps: int = 0
    bench_runs: int = 0
    client_log: list[FrameRecord] = field(default_factory=list)
    peer_log: list[FrameRecord] = field(default_factory=list)


def bind_listener(addr: str) -> socket.socket:
    host, port = parse_address(addr)
    sock = socket.socket(socket.AF_INET6 if ":" in host else socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    sock.listen(4)
    return sock


def _accept(listener: socket.socket, party: int, timeout: float,
            wrap: SocketWrapper | None) -> Connection:
    sock, _ = listener.accept()
    if wrap is not None:
        sock = wrap(sock)
    return Connection(sock, party, None, timeout)


def _connect_session(party: int, cfg: SessionConfig, listener: socket.socket,
                     peer_addr: str | None, wrap: SocketWrapper | None
                     ) -> tuple[Connection, Connection]:
    header = cfg.header(party)
    timeout = cfg.timeout_s
    if party == 0:
        peer = Connection.dial(peer_addr or cfg.parties[1], 0, 1, timeout, wrap,
                               retry_until=time.monotonic() + timeout)
        handshake_dial(peer, header)
        client = None
        try:
            client = _accept(listener, 0, timeout, wrap)
            handshake_accept(client, header, (CLIENT,))
        except BaseException as exc:
            peer.send_error(0, f"party 0 aborted before step 0: {exc}")
            peer.close()
            if client is not None:
                client.close()
            raise
        return client, peer
    client = peer = None
    while client is None or peer is None:
        if peer is not None:
            # watch the peer link too, so an abort at party 0 ends the wait for the client
            ready, _, _ = select.select([listener, peer.sock], [], [])
            if peer.sock in ready:
                try:
                    frame = peer.recv()
                finally:
                    peer.close()
                raise SessionAborted(f"unexpected {frame.msg_type.name} from party 0 before setup")
        conn = _accept(listener, 1, timeout, wrap)
        waiting = tuple(r for r, c in ((CLIENT, client), (0, peer)) if c is None)
        try:
            remote = handshake_accept(conn, header, waiting)
        except (SessionAborted, wire.FrameError, OSError):
            conn.close()
            raise
        if remote.role == CLIENT:
            client = conn
        else:
            peer = conn
    return client, peer


def _bench_mult(party: int, frame, modulus: Modulus, peer: Connection) -> bytes:
    x, y, u, v, w = wire.unpack_matrices(frame.payload, modulus, 5)
    sess = MultSession(party, Share(party, x), Share(party, y), TripleShare(party, u, v, w))
    chan = PeerChannel(peer, party, modulus, frame.step)
    chan.send(sess.outgoing())
    return wire.pack_matrices(sess.receive(chan.recv()).value)


def _bench_trunc(party: int, frame, modulus: Modulus, peer: Connection, ell: int, lam: int) -> bytes:
    x, r, rp = wire.unpack_matrices(frame.payload, modulus, 3)
    sess = TruncSession(party, Share(party, x), TruncShare(party, r, rp), ell, lam)
    chan = PeerChannel(peer, party, modulus, frame.step)
    if party == 0:
        chan.send(sess.outgoing())
        peer.flush()
    else:
        sess.receive(chan.recv())
    return wire.pack_matrices(sess.result.value)


def serve_party(party: int, cfg: SessionConfig, listener: socket.socket | None = None,
                peer_addr: str | None = None, wrap: SocketWrapper | None = None) -> PartyReport:
    """Serve one session: handshake, setup, then steps until the client closes."""
    own = listener is None
    if own:
        listener = bind_listener(cfg.parties[party])
    modulus = cfg.modulus
    report = PartyReport(party)
    client = peer = None
    try:
        client, peer = _connect_session(party, cfg, listener, peer_addr, wrap)
        client.settimeout(None)  # the client may idle between sampling instants
        ctrl = ControllerParty(party, cfg.ell, cfg.lam, cfg.audit)
        bench_step = 0
        while True:
            frame = client.recv()
            mt = frame.msg_type
            if mt is MsgType.CLOSE:
                if party == 0:
                    peer.send(MsgType.CLOSE, frame.step)
                break
            if mt is MsgType.SETUP:
                ctrl.install(wire.decode_setup(frame.payload, modulus, party))
                continue
            if mt is MsgType.STEP_BUNDLE:
                if frame.step != ctrl.step or ctrl.phi is None:
                    text = f"step {frame.step} out of sequence (expected {ctrl.step})"
                    client.send_error(frame.step, text)
                    peer.send_error(frame.step, text)
                    raise SessionAborted(text)
                msg = wire.decode_step(frame.payload, modulus, frame.step, party)
                out = party_step(ctrl, msg, PeerChannel(peer, party, modulus, frame.step))
                peer.flush()
                client.send(MsgType.INPUT_SHARE, out.step, wire.encode_input_share(out))
                report.steps += 1
                continue
            if mt in (MsgType.BENCH_MULT, MsgType.BENCH_TRUNC):
                if frame.step != bench_step:
                    text = f"benchmark request {frame.step} out of sequence"
                    client.send_error(frame.step, text)
                    raise SessionAborted(text)
                if mt is MsgType.BENCH_MULT:
                    payload = _bench_mult(party, frame, modulus, peer)
                else:
                    payload = _bench_trunc(party, frame, modulus, peer, cfg.ell, cfg.lam)
                client.send(MsgType.BENCH_RESULT, frame.step, payload)
                bench_step += 1
                report.bench_runs += 1
                continue
            client.send_error(frame.step, f"unexpected {mt.name}")
            raise SessionAborted(f"unexpected {mt.name} from client")
    except ProtocolError as exc:
        if client is not None:
            client.send_error(0, str(exc))
        raise SessionAborted(str(exc)) from exc
    finally:
        for conn in (client, peer):
            if conn is not None:
                conn.close()
        if own:
            listener.close()
        if client is not None:
            report.client_log = client.log
        if peer is not None:
            report.peer_log = peer.log
    return report
