import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hedonic.dualsolve import DualOptions, dual_objective, minimize_dual
from hedonic.instance import MarketInstance
from hedonic.oracle import brute_force_planner
from hedonic.planner import (MatchingFlow, PriceRecoveryError, build_allocation, pair_surplus,
                             recover_prices, solve_matching, solve_planner)
from hedonic.uconvex import flat, sharp
from hedonic.verify import surplus, verify_equilibrium

from conftest import random_market

seeds = st.integers(0, 2 ** 32 - 1)


def oriented_flow(first: bool) -> MatchingFlow:
    gamma = np.zeros((2, 3))
    if first:
        gamma[0, 0] = gamma[1, 1] = 1.0
    else:
        gamma[0, 1] = gamma[1, 0] = 1.0
    return MatchingFlow(gamma=gamma, consumer_slack=np.zeros(2),
                        producer_slack=np.array([0.0, 0.0, 1.0]), value=4.0)


def test_pair_surplus_small_market(market):
    ps = pair_surplus(market)
    assert ps.w[0, 0] == 2.0 and ps.zstar[0, 0] == 0
    assert ps.w[1, 1] == 2.0 and ps.zstar[1, 1] == 1


def test_pair_surplus_quadratic_pair():
    z = np.linspace(0, 1, 5)
    inst = MarketInstance.from_arrays([-z ** 2 / 2 + 1.0 * z], [3.0 * z ** 2 / 2])
    ps = pair_surplus(inst)
    assert ps.w[0, 0] == pytest.approx(0.125, abs=1e-15)
    assert z[ps.zstar[0, 0]] == 0.25


def test_pair_surplus_ties_lowest_index():
    inst = MarketInstance.from_arrays([[1.0, 2.0, 3.0]], [[1.0, 2.0, 3.0]])
    ps = pair_surplus(inst)
    assert ps.w[0, 0] == 0.0 and ps.zstar[0, 0] == 0


def test_pair_surplus_chunking_agrees():
    inst = random_market(np.random.default_rng(2))
    a, b = pair_surplus(inst, chunk=1), pair_surplus(inst)
    np.testing.assert_array_equal(a.w, b.w)
    np.testing.assert_array_equal(a.zstar, b.zstar)


def test_matching_small_market(market):
    flow, pot = solve_matching(market)
    assert flow.value == pytest.approx(4.0)
    g = flow.gamma
    assert {tuple(np.nonzero(g[0])[0]), tuple(np.nonzero(g[1])[0])} == {(0,), (1,)}
    assert g[:, 2].sum() == 0 and flow.producer_slack[2] == 1.0
    assert pot.converged
    total = market.consumer_weights @ pot.phi + market.producer_weights @ pot.psi
    assert total == pytest.approx(4.0, abs=1e-12)


def test_matching_no_trade(no_trade):
    flow, pot = solve_matching(no_trade)
    assert flow.value == 0.0 and not flow.gamma.any()
    np.testing.assert_array_equal(pot.phi, 0)
    np.testing.assert_array_equal(pot.psi, 0)
    alloc = build_allocation(no_trade, pair_surplus(no_trade), flow)
    assert alloc.alpha[0, no_trade.nod] == 1.0 and alloc.beta[0, no_trade.nos] == 1.0


def test_unknown_potentials_choice(market):
    with pytest.raises(ValueError):
        solve_matching(market, potentials="median")


@pytest.mark.parametrize("first", [True, False])
@pytest.mark.parametrize("which, expect", [("consumer", [1, 0, 0]), ("producer", [1.9, 0.9, 0])])
def test_price_extremes_reproduce_both_equilibria(market, first, which, expect):
    ps = pair_surplus(market)
    _, pot = solve_matching(market, ps, potentials=which)
    p = recover_prices(market, ps, oriented_flow(first), pot)
    np.testing.assert_allclose(p.base, expect, atol=1e-12)


def test_centered_prices_are_an_equilibrium(market):
    sol = solve_planner(market)
    np.testing.assert_allclose(sol.price.base, [1.45, 0.45, 0], atol=1e-12)
    rep = verify_equilibrium(market, sol.price, sol.allocation.alpha, sol.allocation.beta)
    assert rep.passed


def test_inconsistent_flow_is_rejected(market):
    ps = pair_surplus(market)
    _, pot = solve_matching(market, ps, potentials="consumer")
    gamma = np.zeros((2, 3))
    gamma[0, 2] = gamma[1, 1] = 1.0
    flow = MatchingFlow(gamma=gamma, consumer_slack=np.zeros(2),
                        producer_slack=np.array([1.0, 0.0, 0.0]), value=2.1)
    with pytest.raises(PriceRecoveryError, match="z2"):
        recover_prices(market, ps, flow, pot)


def test_allocation_first_orientation(market, allocations):
    a1, _, b = allocations
    alloc = build_allocation(market, pair_surplus(market), oriented_flow(True))
    np.testing.assert_array_equal(alloc.alpha, a1)
    np.testing.assert_array_equal(alloc.beta, b)


def test_fractional_weights():
    inst = MarketInstance.from_arrays([[2.0], [2.0]], [[0.0], [0.0]], [0.5, 1.5], [1.0, 1.0])
    sol = solve_planner(inst)
    al = sol.allocation
    np.testing.assert_array_equal(al.alpha.sum(axis=1), [0.5, 1.5])
    np.testing.assert_array_equal(al.beta.sum(axis=1), [1.0, 1.0])
    assert sol.value == pytest.approx(4.0)
    assert verify_equilibrium(inst, sol.price, al.alpha, al.beta).passed


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    inst = random_market(rng, m_max=5, n_max=5, k_max=4, unit=True, integer=True)
    value, matchings = brute_force_planner(inst)
    sol = solve_planner(inst)
    assert sol.value == pytest.approx(value, abs=1e-9)
    # integrality: the returned flow is one of the optimal matchings
    ii, jj = np.nonzero(sol.flow.gamma > 0.5)
    np.testing.assert_allclose(sol.flow.gamma[sol.flow.gamma > 0], 1.0)
    assert tuple(sorted(zip(ii.tolist(), jj.tolist()))) in matchings


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_dual_certificates(seed):
    rng = np.random.default_rng(seed)
    inst = random_market(rng)
    sol = solve_planner(inst)
    ps, flow, pot = sol.surplus, sol.flow, sol.potentials
    assert pot.converged
    scale = 1e-9 * (1 + np.abs(ps.w).max())
    # feasibility against every quality, not just the best one
    gap = inst.utilities[:, None, :] - inst.costs[None, :, :]
    assert np.all(pot.phi[:, None, None] + pot.psi[None, :, None] >= gap - scale)
    on = flow.gamma > 1e-12
    np.testing.assert_allclose((pot.phi[:, None] + pot.psi[None, :])[on], ps.w[on], atol=scale)
    assert np.all(pot.phi[flow.consumer_slack > 1e-12] <= scale)
    assert np.all(pot.psi[flow.producer_slack > 1e-12] <= scale)
    # strong duality and the surplus identity at the recovered price
    dual = inst.consumer_weights @ pot.phi + inst.producer_weights @ pot.psi
    assert dual == pytest.approx(sol.value, abs=1e-9 * (1 + abs(sol.value)))
    al = sol.allocation
    assert surplus(inst, al.alpha, al.beta) == pytest.approx(sol.value, abs=1e-9 * (1 + abs(sol.value)))
    p = sol.price
    np.testing.assert_allclose(sharp(inst, p), pot.phi, atol=1e-8)
    np.testing.assert_allclose(-flat(inst, p), pot.psi, atol=1e-8)
    assert dual_objective(inst, p) == pytest.approx(sol.value, abs=1e-8 * (1 + abs(sol.value)))
    assert verify_equilibrium(inst, p, al.alpha, al.beta).passed


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_strong_duality_against_dual_descent(seed):
    rng = np.random.default_rng(seed)
    inst = random_market(rng, m_max=8, n_max=8, k_max=6)
    value = solve_planner(inst).value
    st_ = minimize_dual(inst, DualOptions(tol=1e-7), target=value)
    assert st_.objective == pytest.approx(value, abs=1e-6 * (1 + abs(value)))


@pytest.mark.parametrize("which", ["consumer", "producer", "center"])
def test_equal_surplus_across_potential_choices(market, which):
    sol = solve_planner(market, potentials=which)
    assert sol.value == pytest.approx(4.0)
    assert surplus(market, sol.allocation.alpha, sol.allocation.beta) == pytest.approx(4.0)
