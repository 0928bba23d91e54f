"""Blocking framed connections over TCP."""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass
from typing import Callable

from .wire import HEADER, Frame, FrameError, MsgType, SessionHeader, direction_allowed

log = logging.getLogger(__name__)

# optional hook, e.g. ``ssl_context.wrap_socket``; identity by default
SocketWrapper = Callable[[socket.socket], socket.socket]

BACKGROUND_SEND_BYTES = 64 * 1024


class PeerClosed(ConnectionError):
    pass


class SessionAborted(RuntimeError):
    """The remote end sent an ERROR frame or violated the protocol."""


@dataclass(frozen=True)
class FrameRecord:
    direction: str   # "tx" or "rx"
    msg_type: MsgType
    step: int
    size: int


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port:
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host.strip("[]"), int(port)


def _tune(sock: socket.socket) -> None:
    # one small frame per protocol round; Nagle would add delayed-ACK stalls
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


class Connection:
    """A framed, logged stream to one remote role.

    Sends larger than :data:`BACKGROUND_SEND_BYTES` go out on a helper
    thread so two peers that both send before receiving cannot deadlock on
    full socket buffers; the next ``recv`` or ``flush`` waits for it.
    """

    def __init__(self, sock: socket.socket, local_role: int, remote_role: int | None = None,
                 timeout: float = 5.0):
        _tune(sock)
        sock.settimeout(timeout)
        self.sock = sock
        self.local_role = local_role
        self.remote_role = remote_role
        self.log: list[FrameRecord] = []
        self._pending: threading.Thread | None = None
        self._send_error: BaseException | None = None
        self.closed = False

    @classmethod
    def dial(cls, addr: str, local_role: int, remote_role: int, timeout: float = 5.0,
             wrap: SocketWrapper | None = None, retry_until: float | None = None) -> "Connection":
        host, port = parse_address(addr)
        while True:
            try:
                sock = socket.create_connection((host, port), timeout=timeout)
                break
            except OSError:
                if retry_until is None or time.monotonic() > retry_until:
                    raise
                time.sleep(0.05)
        if wrap is not None:
            sock = wrap(sock)
        return cls(sock, local_role, remote_role, timeout)

    def settimeout(self, timeout: float | None) -> None:
        self.sock.settimeout(timeout)

    # sending ------------------------------------------------------------------

    def _sendall(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except BaseException as exc:  # surfaced on the next flush
            self._send_error = exc

    def flush(self) -> None:
        if self._pending is not None:
            self._pending.join()
            self._pending = None
        if self._send_error is not None:
            err, self._send_error = self._send_error, None
            raise ConnectionError(f"send failed: {err}") from err

    def send(self, msg_type: MsgType, step: int, payload: bytes = b"") -> None:
        if self.remote_role is not None and not direction_allowed(msg_type, self.local_role,
                                                                  self.remote_role):
            raise FrameError(f"{msg_type.name} may not travel {self.local_role}->{self.remote_role}")
        self.flush()
        data = Frame(msg_type, step, payload).to_bytes()
        self.log.append(FrameRecord("tx", msg_type, step, len(data)))
        if len(data) > BACKGROUND_SEND_BYTES:
            self._pending = threading.Thread(target=self._sendall, args=(data,), daemon=True)
            self._pending.start()
        else:
            self._sendall(data)
            self.flush()

    def send_error(self, step: int, text: str) -> None:
        try:
            self.send(MsgType.ERROR, step, text.encode()[:4096])
            self.flush()
        except (OSError, ConnectionError):
            pass

    # receiving ----------------------------------------------------------------

    def _recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self.sock.recv(min(n - len(buf), 1 << 20))
            if not chunk:
                raise PeerClosed("connection closed by peer")
            buf += chunk
        return bytes(buf)

    def recv(self, expect: MsgType | tuple[MsgType, ...] | None = None,
             step: int | None = None) -> Frame:
        """Read one frame; ERROR frames and unexpected types raise :class:`SessionAborted`."""
        try:
            plen, mt, st = Frame.parse_header(self._recv_exact(HEADER.size))
            payload = self._recv_exact(plen) if plen else b""
        finally:
            self.flush()
        self.log.append(FrameRecord("rx", mt, st, HEADER.size + plen))
        if mt is MsgType.ERROR:
            raise SessionAborted(f"remote error at step {st}: {payload.decode(errors='replace')}")
        if self.remote_role is not None and not direction_allowed(mt, self.remote_role,
                                                                  self.local_role):
            raise SessionAborted(f"{mt.name} not allowed from role {self.remote_role}")
        if expect is not None:
            allowed = (expect,) if isinstance(expect, MsgType) else expect
            if mt not in allowed:
                raise SessionAborted(f"expected {[a.name for a in allowed]}, got {mt.name}")
        if step is not None and st != step:
            raise SessionAborted(f"out-of-order step index {st}, expected {step}")
        return Frame(mt, st, payload)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        try:
            self.flush()
        except ConnectionError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


def handshake_dial(conn: Connection, header: SessionHeader) -> SessionHeader:
    """Send HELLO, expect ACK with a compatible header."""
    conn.send(MsgType.HELLO, 0, header.to_bytes())
    frame = conn.recv(MsgType.ACK)
    remote = SessionHeader.from_bytes(frame.payload)
    bad = header.mismatches(remote)
    if bad:
        raise SessionAborted(f"session header mismatch on {bad}")
    if conn.remote_role is not None and remote.role != conn.remote_role:
        raise SessionAborted(f"expected role {conn.remote_role}, peer is {remote.role}")
    return remote


def handshake_accept(conn: Connection, header: SessionHeader,
                     allowed_roles: tuple[int, ...]) -> SessionHeader:
    """Read HELLO, validate it against ``header`` and answer ACK (or ERROR)."""
    frame = conn.recv(MsgType.HELLO)
    remote = SessionHeader.from_bytes(frame.payload)
    bad = header.mismatches(remote)
    if remote.role not in allowed_roles:
        bad.append("role")
    if bad:
        conn.send_error(0, f"session header mismatch on {bad}")
        raise SessionAborted(f"rejected HELLO: mismatch on {bad}")
    conn.remote_role = remote.role
    conn.send(MsgType.ACK, 0, header.to_bytes())
    return remote
