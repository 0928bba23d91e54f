import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stpc.dealer import gen_triple, gen_trunc_pair
from stpc.fixedpoint import decode, encode
from stpc.modring import Modulus, ZqMatrix, sample_signed, sample_uniform
from stpc.protocols import (
    MultSession,
    ProtocolError,
    Transcript,
    TruncMaskMsg,
    TruncSession,
    mult_finalize,
    mult_local_mask,
    mult_open,
    round_half_up,
    run_inprocess_mult,
    run_inprocess_trunc,
    trunc_finalize,
    trunc_local_mask,
)
from stpc.rng import SeededRandom
from stpc.sharing import Share, reconst, share

from oracles import centered, round_half_up as rhu_oracle, schoolbook

Q5, Q17, Q61 = Modulus(5), Modulus(17), Modulus(61)


def test_mask_examples(rng):
    X = share(ZqMatrix([[3, 1]], Q17), rng)
    Y = share(ZqMatrix([[2], [5]], Q17), rng)
    t = gen_triple(1, 2, 1, Q17, rng)
    m = mult_local_mask(0, X[0], Y[0], X[0].value, t.v[0].value)
    assert m.s == ZqMatrix.zeros(1, 2, Q17)
    m0 = mult_local_mask(0, X[0], Y[0], t.u[0].value, t.v[0].value)
    m1 = mult_local_mask(1, X[1], Y[1], t.u[1].value, t.v[1].value)
    S, T = mult_open(m0, m1)
    assert S == reconst(X) - reconst(t.u) and T == reconst(Y) - reconst(t.v)
    assert (m0.s.shape, m0.t.shape) == ((1, 2), (2, 1))


def test_mult_small_example(rng):
    out = run_inprocess_mult(share(ZqMatrix([[2]], Q17), rng), share(ZqMatrix([[3]], Q17), rng),
                             gen_triple(1, 1, 1, Q17, rng))
    assert reconst(out).tolist() == [[6]]


def test_mult_zero(rng):
    for _ in range(50):
        Y = sample_uniform(3, 2, Q17, rng)
        out = run_inprocess_mult(share(ZqMatrix.zeros(2, 3, Q17), rng), share(Y, rng),
                                 gen_triple(2, 3, 2, Q17, rng))
        assert reconst(out) == ZqMatrix.zeros(2, 2, Q17)


def test_mult_exhaustive_q5(rng):
    for x, y in itertools.product(range(-2, 3), repeat=2):
        for _ in range(200):
            out = run_inprocess_mult(share(ZqMatrix([[x]], Q5), rng), share(ZqMatrix([[y]], Q5), rng),
                                     gen_triple(1, 1, 1, Q5, rng))
            assert reconst(out).tolist() == [[centered(x * y, 5)]]


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 3), st.binary(min_size=4, max_size=4))
def test_mult_random_256(d1, d2, d3, seed):
    rng = SeededRandom(seed)
    q = Modulus(2**255 + 95)
    X, Y = sample_uniform(d1, d2, q, rng), sample_uniform(d2, d3, q, rng)
    out = run_inprocess_mult(share(X, rng), share(Y, rng), gen_triple(d1, d2, d3, q, rng))
    assert reconst(out).tolist() == schoolbook(X.tolist(), Y.tolist(), q.q)


def test_mult_finalize_adds_st_only_for_party_1(rng):
    S, T = sample_uniform(1, 1, Q17, rng), sample_uniform(1, 1, Q17, rng)
    z = ZqMatrix.zeros(1, 1, Q17)
    assert mult_finalize(0, S, T, z, z, z).value == z
    assert mult_finalize(1, S, T, z, z, z).value == S @ T


def test_trunc_local_mask(rng, q256):
    X = share(sample_uniform(3, 1, q256, rng), rng)
    pair = gen_trunc_pair(3, 1, q256, 32, 80, rng)
    y0 = trunc_local_mask(0, X[0], pair.r[0].value, pair.r_prime[0].value, 32, 80)
    y1 = trunc_local_mask(1, X[1], pair.r[1].value, pair.r_prime[1].value, 32, 80)
    assert y0.shape == (3, 1)
    # party 1 carries the 2^(l-1) J offset; party 0 does not
    assert y0 == X[0].value + pair.r[0].value * 2**32 + pair.r_prime[0].value
    expected = reconst(X) + reconst(pair.r) * 2**32 + reconst(pair.r_prime) + ZqMatrix.full(3, 1, 2**31, q256)
    assert y0 + y1 == expected


def test_trunc_error_set_x8(q256, rng):
    for _ in range(500):
        out = run_inprocess_trunc(share(ZqMatrix([[8]], q256), rng), gen_trunc_pair(1, 1, q256, 2, 80, rng))
        assert reconst(out).data[0, 0] in (1, 2, 3)


def test_trunc_zero(q256, rng):
    for _ in range(200):
        out = run_inprocess_trunc(share(ZqMatrix([[0]], q256), rng), gen_trunc_pair(1, 1, q256, 1, 80, rng))
        assert reconst(out).data[0, 0] in (-1, 0, 1)


def test_trunc_tiny_modulus_exhaustive(rng):
    errors = []
    for x in range(-2, 2):
        for _ in range(1000):
            out = run_inprocess_trunc(share(ZqMatrix([[x]], Q61), rng), gen_trunc_pair(1, 1, Q61, 1, 2, rng))
            errors.append(reconst(out).data[0, 0] - rhu_oracle(x, 1))
    assert set(errors) <= {-1, 0, 1}


@settings(max_examples=20, deadline=None)
@given(st.binary(min_size=4, max_size=4), st.integers(1, 100))
def test_trunc_error_set_256(seed, ell):
    rng = SeededRandom(seed)
    q = Modulus(2**255 + 95)
    lam = 80
    kappa = q.log2_floor - lam - 1
    X = sample_signed(8, 1, kappa, rng)
    out = run_inprocess_trunc(share(ZqMatrix(X, q), rng), gen_trunc_pair(8, 1, q, ell, lam, rng))
    got = reconst(out).data
    assert all(int(g) - rhu_oracle(int(x), ell) in (-1, 0, 1) for g, x in zip(got.flat, X.flat))


def test_fixed_point_product(q256, rng):
    ell = 32
    for a, b in [(Fraction(3, 4), Fraction(-5, 8)), (Fraction(1234567, 2**20), Fraction(-3, 2**31))]:
        prod = encode(a, ell) * encode(b, ell)
        out = run_inprocess_trunc(share(ZqMatrix([[prod]], q256), rng), gen_trunc_pair(1, 1, q256, ell, 80, rng))
        err = decode(reconst(out).data[0, 0], ell) - a * b
        assert abs(err) <= Fraction(3, 2) / 2**ell


def test_communication_pattern(q256, rng):
    tr = Transcript()
    X = share(sample_uniform(2, 2, q256, rng), rng)
    Y = share(sample_uniform(2, 1, q256, rng), rng)
    run_inprocess_mult(X, Y, gen_triple(2, 2, 1, q256, rng), tr)
    assert [(s, r) for s, r, _, _ in tr.messages] == [(0, 1), (1, 0)]
    tr = Transcript()
    run_inprocess_trunc(share(ZqMatrix([[5]], q256), rng), gen_trunc_pair(1, 1, q256, 4, 80, rng), tr)
    assert [(s, r, k) for s, r, k, _ in tr.messages] == [(0, 1, "trunc_mask")]


def test_session_misuse(q256, rng):
    X = share(ZqMatrix([[5]], q256), rng)
    t = gen_triple(1, 1, 1, q256, rng)
    s0 = MultSession(0, X[0], X[0], t.component(0))
    with pytest.raises(ProtocolError):
        s0.receive(s0.outgoing())  # own mask echoed back
    with pytest.raises(ProtocolError):
        MultSession(1, X[0], X[0], t.component(1))
    pair = gen_trunc_pair(1, 1, q256, 4, 80, rng)
    p0 = TruncSession(0, X[0], pair.component(0), 4, 80)
    assert p0.result is not None
    with pytest.raises(ProtocolError):
        p0.receive(TruncMaskMsg(X[0].value))
    p1 = TruncSession(1, X[1], pair.component(1), 4, 80)
    assert p1.outgoing() is None
    p1.receive(p0.outgoing())
    with pytest.raises(ProtocolError):
        p1.receive(p0.outgoing())
    with pytest.raises(ProtocolError):
        trunc_finalize(1, X[1], pair.r_prime[1].value, None, 4)


@given(st.integers(-(2**200), 2**200), st.integers(0, 80))
def test_round_half_up(z, ell):
    assert round_half_up(z, ell) == rhu_oracle(z, ell)
    arr = np.array([[z], [-z]], dtype=object)
    assert round_half_up(arr, ell).tolist() == [[rhu_oracle(z, ell)], [rhu_oracle(-z, ell)]]
