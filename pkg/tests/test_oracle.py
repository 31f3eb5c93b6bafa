import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hedonic.instance import MarketInstance
from hedonic.oracle import (TRADED_HI, TRADED_LO, QuadraticExampleSpec, QuadraticSolution, brute_force_planner,
                            compare_to_analytic, consumer_indirect, demand_map, discretize_quadratic,
                            envelope_bounds, extract_solution, price_constant_bounds, producer_indirect,
                            quadratic_analytic, stated_constant_bounds, supply_map, traded_price)
from hedonic.planner import solve_planner

from conftest import random_market

seeds = st.integers(0, 2 ** 32 - 1)
C_LO, C_HI = price_constant_bounds()


def u(x, z):
    return -0.5 * z ** 2 + x * z


def v(y, z):
    return 0.5 * y * z ** 2


@pytest.fixture(scope="module")
def grid50():
    spec = QuadraticExampleSpec(grid_n=50)
    inst = discretize_quadratic(spec)
    sol = solve_planner(inst)
    return spec, inst, sol


# --- brute force ----------------------------------------------------------------

def test_brute_force_small_market(market):
    value, matchings = brute_force_planner(market)
    assert value == 4.0
    assert matchings == [((0, 0), (1, 1)), ((0, 1), (1, 0))]


def test_brute_force_no_trade(no_trade):
    assert brute_force_planner(no_trade) == (0.0, [()])


def test_brute_force_limits():
    with pytest.raises(ValueError, match="too large"):
        brute_force_planner(MarketInstance.from_arrays(np.ones((7, 1)), np.ones((6, 1))))
    with pytest.raises(ValueError, match="unit weights"):
        brute_force_planner(MarketInstance.from_arrays([[1.0]], [[0.0]], [2.0], [1.0]))


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_brute_force_equals_planner_exactly(seed):
    rng = np.random.default_rng(seed)
    U = rng.integers(-3, 6, (4, 3)).astype(float)
    V = rng.integers(-3, 6, (4, 3)).astype(float)
    inst = MarketInstance.from_arrays(U, V)
    assert brute_force_planner(inst)[0] == solve_planner(inst).value


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_brute_force_monotone(seed):
    rng = np.random.default_rng(seed)
    inst = random_market(rng, m_max=5, n_max=5, k_max=3, unit=True, integer=True)
    base = brute_force_planner(inst)[0]
    U = np.array(inst.utilities)
    V = np.array(inst.costs)
    U[rng.integers(inst.m), rng.integers(inst.K)] += rng.integers(1, 4)
    V[rng.integers(inst.n), rng.integers(inst.K)] -= rng.integers(1, 4)
    assert brute_force_planner(MarketInstance.from_arrays(U, V))[0] >= base


# --- closed form ------------------------------------------------------------------

def test_demand_and_supply_at_the_ends():
    assert demand_map(1.0) == 0.25 and supply_map(3.0) == 0.25
    assert demand_map(2.0) == pytest.approx(2 / 3) and supply_map(2.0) == pytest.approx(2 / 3)
    assert (TRADED_LO, TRADED_HI) == (0.25, 2 / 3)


def test_constant_bounds():
    lo, hi = stated_constant_bounds()
    assert lo == pytest.approx(-0.00928, abs=1e-5) and hi == pytest.approx(2.1157, abs=1e-4)
    assert C_LO == lo and C_HI == pytest.approx(0.11572, abs=1e-5)
    out = quadratic_analytic(QuadraticExampleSpec(), x=1.5)
    assert out["c_bounds"] == (lo, hi) and out["c_bounds_active"] == (C_LO, C_HI)


def test_spec_validation():
    assert QuadraticExampleSpec().c == pytest.approx(0.5 * (C_LO + C_HI))
    assert QuadraticExampleSpec(x_lo=0.5).c == C_HI
    assert QuadraticExampleSpec(c=2.0).c == 2.0
    with pytest.raises(ValueError):
        QuadraticExampleSpec(c=2.2)
    with pytest.raises(ValueError):
        QuadraticExampleSpec(x_lo=0.5, c=0.0)
    with pytest.raises(ValueError):
        QuadraticExampleSpec(grid_n=2)
    with pytest.raises(ValueError):
        QuadraticExampleSpec(x_lo=2.0)


def test_domain_errors():
    with pytest.raises(ValueError):
        demand_map(2.5)
    with pytest.raises(ValueError):
        supply_map(1.0)
    with pytest.raises(ValueError):
        traded_price(0.9, 0.0)
    with pytest.raises(ValueError):
        envelope_bounds(0.5, 0.0)


def test_first_order_condition():
    x = np.linspace(1, 2, 41)[1:-1]
    d = demand_map(x)
    h = 1e-5
    dp = (traded_price(np.clip(d + h, TRADED_LO, TRADED_HI), 0.0)
          - traded_price(np.clip(d - h, TRADED_LO, TRADED_HI), 0.0))
    width = np.clip(d + h, TRADED_LO, TRADED_HI) - np.clip(d - h, TRADED_LO, TRADED_HI)
    np.testing.assert_allclose(dp / width, -d + x, atol=1e-8)


def test_matching_is_four_minus_x():
    x = np.linspace(1, 2, 21)
    np.testing.assert_allclose(supply_map(4 - x), demand_map(x), atol=1e-15)


@pytest.mark.parametrize("c", [C_LO, 0.05, C_HI])
def test_indirect_payoffs_by_direct_evaluation(c):
    x = np.linspace(1, 2, 21)
    d = demand_map(x)
    np.testing.assert_allclose(consumer_indirect(x, c), u(x, d) - traded_price(d, c), atol=1e-13)
    y = np.linspace(2, 3, 21)
    s = supply_map(y)
    np.testing.assert_allclose(producer_indirect(y, c), traded_price(s, c) - v(y, s), atol=1e-13)


def test_everyone_trades_inside_the_active_range():
    assert consumer_indirect(1.0, C_HI) == pytest.approx(0.0, abs=1e-14)
    assert producer_indirect(3.0, C_LO) == pytest.approx(0.0, abs=1e-14)
    # the wider interval's top leaves consumer x = 1 worse off than staying out
    assert consumer_indirect(1.0, stated_constant_bounds()[1]) < -1.9


@pytest.mark.parametrize("c", [C_LO, 0.05, C_HI])
def test_envelopes_are_conjugate_extremes(c):
    xs = np.linspace(1, 2, 4001)
    ys = np.linspace(2, 3, 4001)
    phi = consumer_indirect(xs, c)
    psi = producer_indirect(ys, c)
    z = np.concatenate([np.linspace(0, TRADED_LO, 20), np.linspace(TRADED_HI, 1, 20)])
    lo, hi = envelope_bounds(z, c)
    lo_num = (u(xs[:, None], z[None, :]) - phi[:, None]).max(axis=0)
    hi_num = (v(ys[:, None], z[None, :]) + psi[:, None]).min(axis=0)
    np.testing.assert_allclose(lo, lo_num, atol=1e-12)
    np.testing.assert_allclose(hi, hi_num, atol=1e-12)
    assert np.all(lo <= hi + 1e-12)
    # both envelopes meet the traded price at the ends of the traded set
    ends = np.array([TRADED_LO, TRADED_HI])
    elo, ehi = envelope_bounds(ends, c)
    np.testing.assert_allclose(elo, traded_price(ends, c), atol=1e-13)
    np.testing.assert_allclose(ehi, traded_price(ends, c), atol=1e-13)


def test_lower_envelope_is_the_bid_at_the_top_constant():
    z = np.linspace(0, TRADED_LO, 11)
    lo, _ = envelope_bounds(z, C_HI)
    np.testing.assert_allclose(lo, -z ** 2 / 2 + z, atol=1e-14)


def test_priced_out_consumers_have_zero_demand():
    spec = QuadraticExampleSpec(x_lo=0.5)
    out = quadratic_analytic(spec, x=np.array([0.5, 0.9, 1.0, 2.0]))
    np.testing.assert_allclose(out["demand"], [0, 0, 0.25, 2 / 3])
    np.testing.assert_allclose(out["indirect_utility"][:3], 0.0, atol=1e-14)


def test_analytic_dispatch():
    spec = QuadraticExampleSpec()
    out = quadratic_analytic(spec, y=2.5, z=0.5)
    assert set(out) >= {"supply", "indirect_profit", "price"}
    out = quadratic_analytic(spec, z=np.array([0.1, 0.9]))
    assert out["lower"].shape == (2,) and "price" not in out


# --- discretization ----------------------------------------------------------------

def test_discretize_small_grid():
    inst = discretize_quadratic(QuadraticExampleSpec(grid_n=3))
    np.testing.assert_allclose(inst.consumer_weights, 1 / 3)
    assert inst.utilities[2, 2] == 1.5
    assert inst.consumer_gradients.shape == (3, 3, 1)
    np.testing.assert_array_equal(inst.producer_gradients[0, :, 0], [0, 0.125, 0.5])


def test_exact_input_has_zero_deviation():
    spec = QuadraticExampleSpec(grid_n=13)
    x = np.linspace(1, 2, 13)
    y = np.linspace(2, 3, 13)
    z = np.linspace(0, 1, 13)
    traded = (z >= TRADED_LO - 1e-12) & (z <= TRADED_HI + 1e-12)
    price = np.zeros(13)
    price[traded] = traded_price(np.clip(z[traded], TRADED_LO, TRADED_HI), spec.c)
    sol = QuadraticSolution(x=x, y=y, z=z, demand=demand_map(x), supply=supply_map(y), traded=traded,
                            price=price, alpha=np.zeros((13, 15)), beta=np.zeros((13, 15)))
    dev = compare_to_analytic(spec, sol)
    assert dev.demand_error == 0.0 and dev.supply_error == 0.0
    assert dev.endpoint_error <= 1e-15 and dev.price_error <= 1e-14
    assert dev.c_hat == pytest.approx(spec.c, abs=1e-14) and dev.c_in_bounds


def test_coarse_grid_deviation_is_finite(grid50):
    spec, inst, sol = grid50
    qs = extract_solution(spec, inst, sol.price, sol.allocation.alpha, sol.allocation.beta)
    dev = compare_to_analytic(spec, qs)
    d = dev.to_dict()
    for key in ("demand_error", "supply_error", "endpoint_error", "price_error"):
        assert math.isfinite(d[key])
    assert dev.endpoint_error <= 2 * dev.grid_step
    assert dev.demand_error <= dev.grid_step and dev.producers_active


def test_grid_matching_is_decreasing(grid50):
    _, _, sol = grid50
    w, zstar = sol.surplus.w, sol.surplus.zstar
    ii, jj = np.nonzero(sol.flow.gamma > 1e-12)
    order = np.lexsort((jj, ii))
    ii, jj = ii[order], jj[order]
    assert np.all(sol.flow.gamma.sum(axis=1) > 0)
    # qualities bought rise with x and qualities sold fall with y
    assert np.all(np.diff(zstar[ii, jj]) >= 0)
    by_y = np.argsort(jj, kind="stable")
    assert np.all(np.diff(zstar[ii, jj][by_y]) <= 0)
    # partners fall with x; an inversion is only allowed when uncrossing it
    # is an exact tie, i.e. both pairs trade the same grid quality
    for a in range(len(ii) - 1):
        i1, j1, i2, j2 = ii[a], jj[a], ii[a + 1], jj[a + 1]
        if j2 > j1:
            assert w[i1, j1] + w[i2, j2] == w[i1, j2] + w[i2, j1]
            assert zstar[i1, j1] == zstar[i2, j2]
