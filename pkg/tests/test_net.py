import socket
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stpc.controller import InProcessSession, InputShareMsg, PartySetup, StepMessage, pendulum_controller
from stpc.dealer import TripleShare, TruncShare
from stpc.modring import Modulus, ZqMatrix
from stpc.net import (
    ConfigError,
    Frame,
    FrameError,
    MsgType,
    NetworkClient,
    SessionAborted,
    SessionConfig,
    SessionHeader,
    StepTimeout,
    bind_listener,
    client_session,
    pendulum_config,
    serve_party,
)
from stpc.net import wire
from stpc.net.transport import Connection, handshake_accept
from stpc.net.wire import CLIENT, direction_allowed
from stpc.protocols import MultRound1Msg, TruncMaskMsg

Q = Modulus(2**255 + 95)
residues = st.integers(-(2**254), 2**254)


def matrices(rows=st.integers(1, 4), cols=st.integers(1, 3)):
    return st.tuples(rows, cols).flatmap(
        lambda rc: st.lists(residues, min_size=rc[0] * rc[1], max_size=rc[0] * rc[1]).map(
            lambda vals: ZqMatrix(np.array(vals, dtype=object).reshape(rc), Q)))


class Parties:
    """Both party servers on background threads with ephemeral ports."""

    def __init__(self, cfg, wrap=None):
        self.listeners = [bind_listener("127.0.0.1:0") for _ in range(2)]
        cfg.parties = {i: "127.0.0.1:%d" % l.getsockname()[1] for i, l in enumerate(self.listeners)}
        self.cfg = cfg
        self.reports, self.errors = {}, {}
        self.threads = [threading.Thread(target=self._run, args=(i, wrap), daemon=True) for i in (0, 1)]
        for t in self.threads:
            t.start()

    def _run(self, i, wrap):
        try:
            self.reports[i] = serve_party(i, self.cfg, self.listeners[i], wrap=wrap)
        except BaseException as exc:  # noqa: BLE001 - surfaced to the test
            self.errors[i] = exc
        finally:
            self.listeners[i].close()

    def join(self, timeout=10):
        for t in self.threads:
            t.join(timeout)
        assert not any(t.is_alive() for t in self.threads)


# --- wire format ---------------------------------------------------------------

@given(st.sampled_from(list(MsgType)), st.integers(0, 2**64 - 1), st.binary(max_size=200))
def test_frame_roundtrip(mt, step, payload):
    buf = Frame(mt, step, payload).to_bytes()
    assert int.from_bytes(buf[:4], "big") == 9 + len(payload)
    assert Frame.from_bytes(buf) == Frame(mt, step, payload)


def test_frame_errors():
    good = Frame(MsgType.SETUP, 1, b"xy").to_bytes()
    with pytest.raises(FrameError):
        Frame.from_bytes(good[:4] + bytes([99]) + good[5:])
    with pytest.raises(FrameError):
        Frame.from_bytes((3).to_bytes(4, "big") + good[4:])
    with pytest.raises(FrameError):
        Frame.from_bytes(good + b"z")


def test_directions():
    assert direction_allowed(MsgType.TRUNC_MASK, 0, 1)
    assert not direction_allowed(MsgType.TRUNC_MASK, 1, 0)
    assert direction_allowed(MsgType.MULT_MASK, 1, 0)
    assert not direction_allowed(MsgType.INPUT_SHARE, CLIENT, 0)
    assert not direction_allowed(MsgType.SETUP, 0, 1)


def test_element_width():
    assert Q.byte_width == 32
    assert len(ZqMatrix([[-1]], Q).to_bytes()) == 8 + 32
    assert ZqMatrix([[-1]], Q).to_bytes()[8:] == (Q.q - 1).to_bytes(32, "big")


@settings(max_examples=40, deadline=None)
@given(matrices(), matrices(), matrices(), matrices(), matrices(), matrices(), st.integers(0, 2**40))
def test_payload_roundtrips(a, b, c, d, e, f, step):
    assert wire.decode_setup(wire.encode_setup(PartySetup(1, a, b)), Q, 1) == PartySetup(1, a, b)
    msg = StepMessage(step, 0, a, TripleShare(0, b, c, d), TruncShare(0, e, f))
    assert wire.decode_step(wire.encode_step(msg), Q, step, 0) == msg
    m = MultRound1Msg(1, a, b)
    assert wire.decode_mult_mask(wire.encode_mult_mask(m), Q, 1) == m
    assert wire.decode_trunc_mask(wire.encode_trunc_mask(TruncMaskMsg(c)), Q) == TruncMaskMsg(c)
    for x_next in (None, d):
        s = InputShareMsg(step, 1, a, x_next)
        assert wire.decode_input_share(wire.encode_input_share(s), Q, step, 1) == s


def test_truncated_payload_rejected():
    buf = wire.encode_mult_mask(MultRound1Msg(0, ZqMatrix([[1]], Q), ZqMatrix([[2]], Q)))
    with pytest.raises(FrameError):
        wire.decode_mult_mask(buf[:-1], Q, 0)
    with pytest.raises(FrameError):
        wire.decode_trunc_mask(buf, Q)


@given(st.integers(3, 2**300), st.integers(1, 500), st.integers(1, 9), st.integers(0, 2), st.booleans())
def test_header_roundtrip(q, n, ell, role, audit):
    h = SessionHeader(q, n, 1, 2, 64, ell, 80, role, audit)
    assert SessionHeader.from_bytes(h.to_bytes()) == h
    assert h.mismatches(SessionHeader(q, n, 1, 2, 64, ell, 81, 1 - role if role < 2 else 0, audit)) == ["lam"]


def test_header_bad_magic():
    buf = bytearray(SessionHeader(7, 1, 1, 1, 4, 2, 1, 0).to_bytes())
    buf[0:4] = b"XXXX"
    with pytest.raises(FrameError):
        SessionHeader.from_bytes(bytes(buf))


# --- configuration -------------------------------------------------------------------

def test_config_roundtrip(tmp_path):
    cfg = pendulum_config(period_ms=40)
    path = tmp_path / "s.json"
    cfg.dump(path)
    back = SessionConfig.load(path)
    assert back.to_dict() == cfg.to_dict() and back.period_ms == 40
    spec = back.controller_spec()
    assert spec.phi_ints().tolist() == pendulum_controller().phi_ints().tolist()
    cfg.dump(path, include_controller=False)
    with pytest.raises(ConfigError):
        SessionConfig.load(path).controller_spec()


def test_config_errors():
    base = pendulum_config().to_dict()
    with pytest.raises(ConfigError):
        SessionConfig.from_dict({**base, "colour": 1})
    with pytest.raises(ConfigError):
        SessionConfig.from_dict({k: v for k, v in base.items() if k != "modulus"})
    with pytest.raises(ConfigError):
        SessionConfig.from_dict({**base, "on_timeout": "retry"})
    with pytest.raises(ValueError):
        SessionConfig.from_dict({**base, "modulus": "0x10"})
    assert SessionConfig.from_dict({**base, "modulus": str(2**255 + 95)}).q == 2**255 + 95
    with pytest.raises(ConfigError):
        SessionConfig.from_dict({**base, "n": 4}).controller_spec()


# --- live sessions --------------------------------------------------------------------

def test_loopback_matches_inprocess():
    cfg = pendulum_config(audit=True)
    parties = Parties(cfg)
    ys = [[str(0.5 * t), "-0.25"] for t in range(20)]
    recs = client_session(cfg, lambda t, u: ys[t], 20, seed=7, period_s=0)
    parties.join()
    assert not parties.errors
    ref = InProcessSession(cfg.controller_spec(), seed=7)
    for t in range(20):
        r = ref.step(ys[t])
        assert r.u.tolist() == recs[t].u.tolist()
        assert [m.u for m in r.shares] == [m.u for m in recs[t].shares]
        assert r.x_bar_next.tolist() == recs[t].x_bar_next.tolist()
    ref.close()
    assert len(recs) == 20 and parties.reports[0].steps == 20


def test_per_step_traffic_and_frame_audit():
    cfg = pendulum_config()
    parties = Parties(cfg)
    client_session(cfg, lambda t, u: [0, 0], 3, seed=1, period_s=0)
    parties.join()
    r0, r1 = parties.reports[0], parties.reports[1]

    def count(log, direction, mt, step):
        return sum(1 for f in log if f.direction == direction and f.msg_type is mt and f.step == step)

    for step in range(3):
        assert count(r0.client_log, "rx", MsgType.STEP_BUNDLE, step) == 1
        assert count(r1.client_log, "rx", MsgType.STEP_BUNDLE, step) == 1
        assert count(r0.peer_log, "tx", MsgType.MULT_MASK, step) == 1
        assert count(r1.peer_log, "tx", MsgType.MULT_MASK, step) == 1
        assert count(r0.peer_log, "tx", MsgType.TRUNC_MASK, step) == 1
        assert count(r1.peer_log, "tx", MsgType.TRUNC_MASK, step) == 0
        assert count(r0.client_log, "tx", MsgType.INPUT_SHARE, step) == 1
        assert count(r1.client_log, "tx", MsgType.INPUT_SHARE, step) == 1
    # parties only ever emit masks, their own input shares and control frames
    allowed = {MsgType.HELLO, MsgType.ACK, MsgType.MULT_MASK, MsgType.TRUNC_MASK,
               MsgType.INPUT_SHARE, MsgType.CLOSE}
    for r in (r0, r1):
        assert {f.msg_type for f in r.client_log + r.peer_log if f.direction == "tx"} <= allowed
        # without audit an input share is exactly one 1x1 matrix
        sizes = {f.size for f in r.client_log if f.msg_type is MsgType.INPUT_SHARE}
        assert sizes == {13 + 8 + 32}


def test_zero_step_session_only_sets_up():
    cfg = pendulum_config()
    parties = Parties(cfg)
    assert client_session(cfg, lambda t, u: [0, 0], 0, seed=1) == []
    parties.join()
    for r in parties.reports.values():
        assert r.steps == 0
        assert [f.msg_type for f in r.client_log if f.direction == "rx"] == [
            MsgType.HELLO, MsgType.SETUP, MsgType.CLOSE]


def test_stale_step_aborts_session():
    cfg = pendulum_config()
    parties = Parties(cfg)
    client = NetworkClient(cfg, seed=2)
    client.connect()
    client.setup()
    client.step([0, 0])
    msgs = client.core.begin([0, 0])
    for conn, msg in zip(client.conns, msgs):
        conn.send(MsgType.STEP_BUNDLE, 0, wire.encode_step(msg))  # replayed index
    with pytest.raises(SessionAborted, match="out of sequence"):
        client.conns[0].recv()
    client.close()
    parties.join()
    assert isinstance(parties.errors.get(0), SessionAborted)
    assert isinstance(parties.errors.get(1), SessionAborted)


def test_handshake_mismatch_rejected():
    cfg = pendulum_config()
    parties = Parties(cfg)
    bad = SessionConfig.from_dict({**cfg.to_dict(), "lam": 79})
    bad.parties = cfg.parties
    client = NetworkClient(bad, spec=pendulum_controller(lam=80))
    with pytest.raises(SessionAborted, match="mismatch"):
        client.connect()
    for c in client.conns:
        c.close()
    parties.join()
    assert isinstance(parties.errors[0], SessionAborted)


def test_socket_wrapper_hook_is_used():
    wrapped = []

    def wrap(sock):
        wrapped.append(sock)
        return sock

    cfg = pendulum_config()
    parties = Parties(cfg, wrap=wrap)
    client = NetworkClient(cfg, seed=3, wrap=wrap)
    client.connect()
    client.setup()
    assert client.step([1, 0]).u.tolist() == [[pytest.approx(33.022125244140625)]]
    client.close()
    parties.join()
    assert len(wrapped) == 6  # client x2, P0 dial + accept, P1 accept x2


def _silent_party(listener, role, cfg, stop):
    sock, _ = listener.accept()
    conn = Connection(sock, role, None, 5)
    handshake_accept(conn, cfg.header(role), (CLIENT,))
    stop.wait(5)
    conn.close()


@pytest.mark.parametrize("policy", ["abort", "hold"])
def test_step_timeout_policy(policy):
    cfg = pendulum_config(timeout_s=0.3, on_timeout=policy)
    listeners = [bind_listener("127.0.0.1:0") for _ in range(2)]
    cfg.parties = {i: "127.0.0.1:%d" % l.getsockname()[1] for i, l in enumerate(listeners)}
    stop = threading.Event()
    threads = [threading.Thread(target=_silent_party, args=(listeners[i], i, cfg, stop), daemon=True)
               for i in (0, 1)]
    for t in threads:
        t.start()
    client = NetworkClient(cfg, seed=1)
    client.connect()
    client.setup()
    try:
        if policy == "abort":
            with pytest.raises(StepTimeout):
                client.step([0, 0])
        else:
            rec = client.step([0, 0])
            assert rec.timed_out and rec.u is None and client.core.step == 1
    finally:
        stop.set()
        client.close()
        for t in threads:
            t.join(5)
        for l in listeners:
            l.close()


def test_connect_refused():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    cfg = pendulum_config(timeout_s=0.2)
    cfg.parties = {0: f"127.0.0.1:{port}", 1: f"127.0.0.1:{port}"}
    with pytest.raises(OSError):
        NetworkClient(cfg).connect()
