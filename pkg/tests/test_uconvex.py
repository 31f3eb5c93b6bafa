import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hedonic.instance import MarketInstance, bid_ask
from hedonic.uconvex import (ACTIVE, INACTIVE, INDIFFERENT, PriceSystem, argmax_sets, as_values,
                             biconjugates, conjugate_profile, flat, sharp)

from conftest import random_market

seeds = st.integers(0, 2 ** 32 - 1)


def random_price(rng, inst, spread=1.0):
    ba = bid_ask(inst)
    lo = np.minimum(ba.ask[: inst.K], ba.bid[: inst.K]) - spread
    hi = np.maximum(ba.ask[: inst.K], ba.bid[: inst.K]) + spread
    return PriceSystem.from_base(rng.uniform(lo, hi))


def test_price_system_validation():
    with pytest.raises(ValueError):
        PriceSystem(np.array([1.0, 0.5, 0.0]))
    with pytest.raises(ValueError):
        PriceSystem(np.array([np.inf, 0.0, 0.0]))
    p = PriceSystem.from_base([1.0, 2.0])
    assert p.values.tolist() == [1.0, 2.0, 0.0, 0.0]
    assert p.replace(0, 3.0).base.tolist() == [3.0, 2.0]


def test_as_values_lengths(market):
    assert as_values(market, [1, 0, 0]).shape == (5,)
    with pytest.raises(ValueError):
        as_values(market, [1, 0])


def test_sharp_flat_at_low_prices(market):
    p = [1, 0, 0]
    np.testing.assert_array_equal(sharp(market, p), [1, 2])
    np.testing.assert_array_equal(flat(market, p), [-1, 0, 0])


def test_zero_price_floors(market):
    p = np.zeros(3)
    np.testing.assert_array_equal(sharp(market, p), np.maximum(0, market.utilities.max(axis=1)))
    np.testing.assert_array_equal(flat(market, p), np.minimum(0, market.costs.min(axis=1)))


def test_conjugate_of_shifted_utility(market):
    # f(x) = u(x, zbar) + a  has conjugate -a at zbar
    a, zbar = 0.7, 1
    f = market.utilities[:, zbar] + a
    s2, _ = biconjugates(market, np.zeros(5), s=f)
    assert s2[zbar] == pytest.approx(-a, abs=1e-15)


def test_biconjugates_low_prices(market):
    s2, f2 = biconjugates(market, [1, 0, 0])
    assert s2[2] == pytest.approx(-0.9)
    assert f2[2] == 0.0


def test_u_convex_price_is_fixed_point():
    rng = np.random.default_rng(3)
    inst = random_market(rng, k_max=6)
    b = rng.uniform(-2, 2, inst.m)
    p = (inst.extended_utilities + b[:, None]).max(axis=0)
    s2, _ = biconjugates(inst, p)
    np.testing.assert_allclose(s2, p, atol=1e-12)


def test_demand_sets_at_both_price_vectors(market):
    sets = argmax_sets(market, [1, 0, 0])
    assert sets.demand_set(0) == (0, 1)
    sets = argmax_sets(market, [1.9, 0.9, 0])
    assert sets.demand_set(0) == (0, 1, 2)
    assert sets.consumer_activity[0] == ACTIVE


def test_prices_above_bid_send_everyone_home(market):
    ba = bid_ask(market)
    sets = argmax_sets(market, ba.bid[:3] + 1.0)
    for i in range(market.m):
        assert sets.demand_set(i) == (market.nod,)
    assert set(sets.consumer_activity) == {INACTIVE}


def test_indifferent_agent():
    inst = MarketInstance.from_arrays([[2.0]], [[1.0]])
    sets = argmax_sets(inst, [2.0])
    assert sets.consumer_activity == (INDIFFERENT,)
    assert sets.producer_activity == (ACTIVE,)
    assert sets.demand_set(0) == (0, 1)


def test_negative_tol_rejected(market):
    with pytest.raises(ValueError):
        argmax_sets(market, [1, 0, 0], tol=-1.0)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_fenchel_inequality(seed):
    rng = np.random.default_rng(seed)
    inst = random_market(rng)
    p = random_price(rng, inst).values
    s = sharp(inst, p)
    f = flat(inst, p)
    assert np.all(s[:, None] + p[None, :] >= inst.extended_utilities - 1e-12)
    assert np.all(f[:, None] + p[None, :] <= inst.extended_costs + 1e-12)
    sets = argmax_sets(inst, p, tol=0.0)
    eq = inst.extended_utilities - p[None, :] == s[:, None]
    assert np.array_equal(eq, sets.demand)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_order_reversal(seed):
    rng = np.random.default_rng(seed)
    inst = random_market(rng)
    p = random_price(rng, inst)
    q = PriceSystem.from_base(p.base + rng.uniform(0, 1, inst.K))
    assert np.all(sharp(inst, p) >= sharp(inst, q))
    assert np.all(flat(inst, p) >= flat(inst, q))
    assert np.all(flat(inst, q) >= flat(inst, p) - (q.values - p.values).max() - 1e-12)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_envelopes_bracket_price_and_are_idempotent(seed):
    rng = np.random.default_rng(seed)
    inst = random_market(rng)
    p = random_price(rng, inst).values
    prof = conjugate_profile(inst, p)
    assert np.all(prof.sharp2 <= p + 1e-12)
    assert np.all(prof.flat2 >= p - 1e-12)
    np.testing.assert_allclose(sharp(inst, prof.sharp2), prof.sharp, atol=1e-12)
    np.testing.assert_allclose(flat(inst, prof.flat2), prof.flat, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_selection_and_never_cross(seed):
    rng = np.random.default_rng(seed)
    inst = random_market(rng)
    p = random_price(rng, inst).values
    s2, f2 = biconjugates(inst, p)
    sets = argmax_sets(inst, p)
    for i in range(inst.m):
        ks = np.array(sets.demand_set(i))
        assert np.min(np.abs(p[ks] - s2[ks])) <= 1e-9
    for j in range(inst.n):
        ks = np.array(sets.supply_set(j))
        assert np.min(np.abs(p[ks] - f2[ks])) <= 1e-9
    assert not sets.demand[:, inst.nos].any()
    assert not sets.supply[:, inst.nod].any()
