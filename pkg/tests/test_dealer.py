import itertools

import pytest

from stpc.controller import pendulum_controller
from stpc.dealer import (
    Dealer,
    DealerError,
    check_trunc_params,
    gen_batch,
    gen_bundle,
    gen_triple,
    gen_trunc_pair,
    trunc_kappa,
)
from stpc.modring import Modulus
from stpc.rng import SeededRandom
from stpc.sharing import reconst

from oracles import schoolbook, signed_range

Q5, Q17 = Modulus(5), Modulus(17)


def test_triple_relation_q17(rng):
    for _ in range(1000):
        t = gen_triple(2, 2, 1, Q17, rng)
        U, V = reconst(t.u), reconst(t.v)
        assert reconst(t.w).tolist() == schoolbook(U.tolist(), V.tolist(), 17)


def test_triple_relation_q5_many_seeds():
    for seed in range(300):
        assert gen_triple(1, 1, 1, Q5, SeededRandom(seed)).holds()


def test_triple_covers_all_q5_pairs():
    seen = set()
    rng = SeededRandom("cover")
    for _ in range(400):
        t = gen_triple(1, 1, 1, Q5, rng)
        seen.add((reconst(t.u).data[0, 0], reconst(t.v).data[0, 0]))
    assert seen == set(itertools.product(range(-2, 3), repeat=2))


def test_triple_shapes(rng):
    t = gen_triple(3, 2, 1, Q17, rng)
    assert (t.u.shape, t.v.shape, t.w.shape) == ((3, 2), (2, 1), (3, 1))
    with pytest.raises(DealerError):
        gen_triple(0, 1, 1, Q17, rng)


def test_kappa_256(q256):
    assert trunc_kappa(q256, 80) == 174
    pair = gen_trunc_pair(4, 1, q256, 32, 80, SeededRandom(1))
    assert pair.kappa == 174
    assert pair.kappa - pair.ell + pair.lam == 222  # R in [-2^221, 2^221)


def test_trunc_params_rejected(q256):
    with pytest.raises(DealerError):
        check_trunc_params(q256, 32, 300)
    with pytest.raises(DealerError):
        check_trunc_params(Modulus(61), 2, 2)  # kappa = 2, not > 2
    with pytest.raises(DealerError):
        check_trunc_params(q256, 0, 80)


def test_trunc_ranges(q256, rng):
    pair = gen_trunc_pair(100, 100, q256, 32, 80, rng)
    assert pair.in_range()
    lo_r, hi_r = signed_range(222)
    lo_p, hi_p = signed_range(32)
    assert all(lo_r <= v <= hi_r for v in reconst(pair.r).data.flat)
    assert all(lo_p <= v <= hi_p for v in reconst(pair.r_prime).data.flat)


def test_trunc_ranges_tiny_modulus_are_tight():
    pair = gen_trunc_pair(50, 50, Modulus(61), 1, 2, SeededRandom(3))
    # kappa = 2 so R in Z_3 = {-4..3}, R' in Z_1 = {-1, 0}
    assert {int(v) for v in reconst(pair.r).data.flat} == set(range(-4, 4))
    assert {int(v) for v in reconst(pair.r_prime).data.flat} == {-1, 0}


def test_batch():
    spec = pendulum_controller()
    batch = gen_batch(10, spec, SeededRandom(1))
    assert [b.serial for b in batch] == list(range(10))
    for b in batch:
        assert b.triple.holds() and b.trunc.in_range()
        assert b.triple.u.shape == (4, 5) and b.triple.v.shape == (5, 1)
        assert b.trunc.r.shape == (3, 1)
    with pytest.raises(DealerError):
        gen_batch(0, spec, SeededRandom(1))


def test_batch_of_one_matches_single_call():
    spec = pendulum_controller()
    a = gen_batch(1, spec, SeededRandom(9))[0]
    b = gen_bundle(spec, SeededRandom(9))
    assert reconst(a.triple.u) == reconst(b.triple.u)
    assert a.triple.w.s1.value == b.triple.w.s1.value


def test_distinct_seeds_give_distinct_bundles():
    spec = pendulum_controller()
    a = gen_bundle(spec, SeededRandom(1))
    b = gen_bundle(spec, SeededRandom(2))
    assert reconst(a.triple.u) != reconst(b.triple.u)


@pytest.mark.parametrize("prefetch", [0, 3])
def test_dealer_serials_monotone_and_prefetch_invariant(prefetch):
    spec = pendulum_controller()
    ref = [gen_bundle(spec, r, i) for r in [SeededRandom(4)] for i in range(5)]
    with Dealer(spec, SeededRandom(4), prefetch) as d:
        got = [d.next_bundle() for _ in range(5)]
    assert [b.serial for b in got] == list(range(5))
    assert all(reconst(g.triple.u) == reconst(r.triple.u) for g, r in zip(got, ref))
