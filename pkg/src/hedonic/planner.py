"""Planner's problem: surplus-maximizing partial matching of consumers and producers.

A matched pair ``(x_i, y_j)`` trades the quality that maximizes
``u(x_i, z) - v(y_j, z)``; unmatched mass earns the reservation payoff 0.
The resulting transportation problem with inequality marginals

    max  sum_ij gamma_ij w_ij
    s.t. sum_j gamma_ij <= mu_i,  sum_i gamma_ij <= nu_j,  gamma >= 0

is solved exactly by successive shortest paths on the bipartite network
``s -> consumers -> producers -> t``. Its dual variables are the indirect
utilities of the two sides, from which equilibrium prices are read off.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .instance import MarketInstance, bid_ask
from .uconvex import PriceSystem

__all__ = [
    "PairSurplus",
    "MatchingFlow",
    "Potentials",
    "Allocation",
    "PriceRecoveryError",
    "pair_surplus",
    "solve_matching",
    "recover_prices",
    "build_allocation",
    "solve_planner",
    "PlannerSolution",
]

log = logging.getLogger(__name__)


class PriceRecoveryError(ValueError):
    """Pairs trading the same quality imply different prices."""


@dataclass(frozen=True)
class PairSurplus:
    """``w[i, j] = max_k u(x_i, z_k) - v(y_j, z_k)`` and a maximizing ``zstar[i, j]``."""

    w: np.ndarray
    zstar: np.ndarray


@dataclass(frozen=True)
class MatchingFlow:
    gamma: np.ndarray
    consumer_slack: np.ndarray
    producer_slack: np.ndarray
    value: float


@dataclass(frozen=True)
class Potentials:
    """Dual solution: ``phi`` (consumer indirect utility), ``psi`` (producer profit).

    ``cs_violation`` is the worst violation of dual feasibility or
    complementary slackness; ``converged`` is False when it exceeds the
    requested tolerance.
    """

    phi: np.ndarray
    psi: np.ndarray
    cs_violation: float
    converged: bool


@dataclass(frozen=True)
class Allocation:
    """Demand distribution ``alpha`` (m, K+2) and supply distribution ``beta`` (n, K+2)."""

    alpha: np.ndarray
    beta: np.ndarray

    def conditional(self, inst: MarketInstance):
        """Per-type conditional probabilities over the extended set."""
        return (self.alpha / inst.consumer_weights[:, None],
                self.beta / inst.producer_weights[:, None])


def pair_surplus(inst: MarketInstance, chunk: int = 64) -> PairSurplus:
    U, V = inst.utilities, inst.costs
    m, n = inst.m, inst.n
    w = np.empty((m, n))
    zstar = np.empty((m, n), dtype=int)
    for lo in range(0, m, chunk):
        block = U[lo:lo + chunk, None, :] - V[None, :, :]
        # argmax returns the first maximizer: ties go to the lowest index
        k = block.argmax(axis=2)
        zstar[lo:lo + chunk] = k
        w[lo:lo + chunk] = np.take_along_axis(block, k[..., None], axis=2)[..., 0]
    return PairSurplus(w=w, zstar=zstar)


# --------------------------------------------------------------------------
# successive shortest paths

def _shortest_path(rc_arc, arcs, gamma, r, cap, pi_c, pi_p, pi_t, eps):
    """Dijkstra from the source on reduced costs.

    Node layout: consumers ``0..m-1``, producers ``m..m+n-1``, sink ``m+n``.
    Returns reduced distances (sink capped) and predecessor arrays.
    """
    m, n = rc_arc.shape
    N = m + n + 1
    dist = np.full(N, np.inf)
    pred = np.full(N, -1, dtype=int)
    done = np.zeros(N, dtype=bool)
    src = r > eps
    dist[:m][src] = np.maximum(-pi_c[src], 0.0)
    pred[:m][src] = -2  # reached from the source
    sink = m + n
    while True:
        cand = np.where(done, np.inf, dist)
        v = int(cand.argmin())
        dv = cand[v]
        if not np.isfinite(dv):
            break
        done[v] = True
        if v == sink:
            break
        if v < m:
            i = v
            row = np.where(arcs[i], dv + np.maximum(rc_arc[i], 0.0), np.inf)
            seg = dist[m:m + n]
            better = (row < seg) & ~done[m:m + n]
            seg[better] = row[better]
            pred[m:m + n][better] = i
        else:
            j = v - m
            if cap[j] > eps:
                d = dv + max(pi_p[j] - pi_t, 0.0)
                if d < dist[sink]:
                    dist[sink] = d
                    pred[sink] = v
            back = gamma[:, j] > eps
            if back.any():
                # reverse arc j -> i has reduced cost -rc_arc[i, j]
                col = np.where(back, dv + np.maximum(-rc_arc[:, j], 0.0), np.inf)
                seg = dist[:m]
                better = (col < seg) & ~done[:m]
                seg[better] = col[better]
                pred[:m][better] = v
    return dist, pred


def _ssp(w, arcs, mu, nu, eps, stop_tol):
    m, n = w.shape
    gamma = np.zeros((m, n))
    r = mu.astype(float).copy()
    cap = nu.astype(float).copy()
    # feasible start: reduced cost -w + pi_c - pi_p >= 0 on every arc
    pi_c = np.zeros(m)
    pi_p = np.where(arcs, -w, np.inf).min(axis=0)
    pi_p[~np.isfinite(pi_p)] = 0.0
    pi_t = min(pi_p.min(), 0.0)
    sink = m + n
    n_aug = 0
    while True:
        rc_arc = -w + pi_c[:, None] - pi_p[None, :]
        dist, pred = _shortest_path(rc_arc, arcs, gamma, r, cap, pi_c, pi_p, pi_t, eps)
        dt = dist[sink]
        if not np.isfinite(dt):
            break
        capd = np.minimum(dist, dt)
        pi_c += capd[:m]
        pi_p += capd[m:m + n]
        pi_t += dt
        # real length of the path: pi_t - pi_s with pi_s = 0
        if pi_t >= -stop_tol:
            break
        path = []
        v = sink
        while v != -2:
            path.append(v)
            v = pred[v]
        path.reverse()  # consumer, producer, consumer, ..., producer, sink
        i0 = path[0]
        jl = path[-2] - m
        delta = min(r[i0], cap[jl])
        for a, b in zip(path[:-2], path[1:-1]):
            if a >= m:  # backward arc producer a -> consumer b
                delta = min(delta, gamma[b, a - m])
        for a, b in zip(path[:-2], path[1:-1]):
            if a < m:
                gamma[a, b - m] += delta
            else:
                gamma[b, a - m] -= delta
                if gamma[b, a - m] <= eps:
                    gamma[b, a - m] = 0.0
        r[i0] -= delta
        cap[jl] -= delta
        n_aug += 1
    log.debug("successive shortest paths: %d augmentations", n_aug)
    return gamma


def _bellman_ford(w, arcs, gamma, r, cap, eps, reverse=False, max_iter=None):
    """Extreme feasible node potentials on the final residual network.

    With ``reverse=False`` returns the largest potentials with ``pi_s = 0``
    (shortest distances from the source); with ``reverse=True`` the
    smallest (minus shortest distances to the source). The bypass arcs
    ``s <-> t`` of cost 0 pin ``pi_t = 0``.
    """
    m, n = w.shape
    flow_arc = gamma > eps
    unsat_c = r > eps
    used_c = gamma.sum(axis=1) > eps
    unsat_p = cap > eps
    used_p = gamma.sum(axis=0) > eps
    INF = np.inf
    W_fwd = np.where(arcs, -w, INF)     # i -> j
    W_bwd = np.where(flow_arc, w, INF)  # j -> i
    max_iter = max_iter or 4 * (m + n + 2)
    if not reverse:
        dc = np.where(unsat_c, 0.0, INF)
        dp = np.full(n, INF)
        dt = 0.0
        for _ in range(max_iter):
            dp_new = np.minimum(dp, (dc[:, None] + W_fwd).min(axis=0))
            dp_new = np.minimum(dp_new, np.where(used_p, dt, INF))
            dc_new = np.minimum(dc, (dp_new[None, :] + W_bwd).min(axis=1))
            dc_new = np.minimum(dc_new, np.where(unsat_c, 0.0, INF))
            dt_new = min(0.0, np.where(unsat_p, dp_new, INF).min())
            if np.array_equal(dp_new, dp) and np.array_equal(dc_new, dc) and dt_new == dt:
                break
            dc, dp, dt = dc_new, dp_new, dt_new
        return dc, dp
    ec = np.where(used_c, 0.0, INF)
    ep = np.full(n, INF)
    et = 0.0
    for _ in range(max_iter):
        ep_new = np.minimum(ep, (W_bwd + ec[:, None]).min(axis=0))
        ep_new = np.minimum(ep_new, np.where(unsat_p, et, INF))
        ec_new = np.minimum(ec, (W_fwd + ep_new[None, :]).min(axis=1))
        ec_new = np.minimum(ec_new, np.where(used_c, 0.0, INF))
        et_new = min(0.0, np.where(used_p, ep_new, INF).min())
        if np.array_equal(ep_new, ep) and np.array_equal(ec_new, ec) and et_new == et:
            break
        ec, ep, et = ec_new, ep_new, et_new
    return -ec, -ep


def _cs_violation(w, gamma, phi, psi, cslack, pslack, eps):
    scale = 1.0 + np.abs(w).max()
    viol = max(0.0, float((w - phi[:, None] - psi[None, :]).max()))
    on = gamma > eps
    if on.any():
        viol = max(viol, float(np.abs((phi[:, None] + psi[None, :] - w)[on]).max()))
    viol = max(viol, float(phi[cslack > eps].max(initial=0.0)),
               float(psi[pslack > eps].max(initial=0.0)),
               float(-phi.min()), float(-psi.min()))
    return viol / scale


def solve_matching(inst: MarketInstance, ps: PairSurplus | None = None,
                   tol: float = 1e-12, potentials: str = "center"):
    """Exact planner optimum and dual potentials.

    Parameters
    ----------
    inst : MarketInstance
    ps : PairSurplus, optional
        Computed from ``inst`` when omitted.
    tol : float
        Zero threshold for masses and arc instantiation.
    potentials : {"center", "consumer", "producer"}
        The optimal dual is rarely unique. ``"consumer"`` returns the dual
        solution most favourable to consumers (largest ``phi``),
        ``"producer"`` the one most favourable to producers, and
        ``"center"`` their average, which keeps untraded prices strictly
        inside their bands whenever the bands are non-degenerate.

    Returns
    -------
    flow : MatchingFlow
    potentials : Potentials
    """
    if potentials not in ("center", "consumer", "producer"):
        raise ValueError(f"unknown potentials choice {potentials!r}")
    if ps is None:
        ps = pair_surplus(inst)
    w = ps.w
    mu = np.asarray(inst.consumer_weights, float)
    nu = np.asarray(inst.producer_weights, float)
    scale = 1.0 + float(np.abs(w).max())
    arcs = w > -tol * scale
    mass_eps = tol * max(1.0, float(mu.max()), float(nu.max()))
    gamma = _ssp(w, arcs, mu, nu, mass_eps, stop_tol=tol * scale)
    r = mu - gamma.sum(axis=1)
    cap = nu - gamma.sum(axis=0)
    r[np.abs(r) <= mass_eps] = 0.0
    cap[np.abs(cap) <= mass_eps] = 0.0

    def to_dual(pc, pp):
        with np.errstate(invalid="ignore"):
            phi = np.where(np.isfinite(pc), np.maximum(pc, 0.0), 0.0)
            psi = np.where(np.isfinite(pp), np.maximum(-pp, 0.0), 0.0)
        return phi, psi, _cs_violation(w, gamma, phi, psi, r, cap, mass_eps)

    hi = _bellman_ford(w, arcs, gamma, r, cap, mass_eps)
    phi, psi, viol = to_dual(*hi)
    if potentials != "consumer":
        lo = _bellman_ford(w, arcs, gamma, r, cap, mass_eps, reverse=True)
        if potentials == "producer":
            cand = to_dual(*lo)
        else:
            with np.errstate(invalid="ignore"):
                pc = np.where(np.isfinite(hi[0]) & np.isfinite(lo[0]), 0.5 * (hi[0] + lo[0]), hi[0])
                pp = np.where(np.isfinite(hi[1]) & np.isfinite(lo[1]), 0.5 * (hi[1] + lo[1]), hi[1])
            cand = to_dual(pc, pp)
        # unreachable nodes can break the other extreme; the consumer-best
        # solution is always feasible, so keep it in that case
        if cand[2] <= max(viol, 1e-9):
            phi, psi, viol = cand
    value = float((gamma * w).sum())
    flow = MatchingFlow(gamma=gamma, consumer_slack=r, producer_slack=cap, value=value)
    pot = Potentials(phi=phi, psi=psi, cs_violation=float(viol), converged=bool(viol <= 1e-9))
    if not pot.converged:
        log.warning("complementary slackness violated by %.3g", viol)
    return flow, pot


def recover_prices(inst: MarketInstance, ps: PairSurplus, flow: MatchingFlow,
                   pot: Potentials, tol: float = 1e-9) -> PriceSystem:
    """Equilibrium prices from an optimal flow and its dual potentials.

    Traded qualities get the unique price ``u(x_i, z_k) - phi_i`` of the
    pairs trading them. Untraded marketable qualities get the midpoint of
    the band ``[L_k, U_k]`` of prices that attract neither side; non-marketable
    qualities get the midpoint of ask and bid.

    Raises
    ------
    PriceRecoveryError
        If two trading pairs imply prices for the same quality that differ
        by more than ``tol`` (relative), which signals a non-optimal flow.
    """
    K = inst.K
    U, V = inst.utilities, inst.costs
    phi, psi = pot.phi, pot.psi
    ba = bid_ask(inst)
    a, b = ba.ask[:K], ba.bid[:K]
    marketable = ba.marketable_mask
    scale = 1.0 + float(np.abs(U).max()) + float(np.abs(V).max())
    eps = 1e-12 * max(1.0, float(inst.consumer_weights.max()), float(inst.producer_weights.max()))

    p = np.empty(K)
    traded = np.zeros(K, dtype=bool)
    ii, jj = np.nonzero(flow.gamma > eps)
    kk = ps.zstar[ii, jj]
    for k in np.unique(kk):
        sel = kk == k
        from_buyers = U[ii[sel], k] - phi[ii[sel]]
        from_sellers = V[jj[sel], k] + psi[jj[sel]]
        both = np.concatenate([from_buyers, from_sellers])
        if both.max() - both.min() > tol * scale:
            raise PriceRecoveryError(
                f"inconsistent traded price at quality {inst.quality_ids[k]!r}: "
                f"spread {both.max() - both.min():.3g}")
        p[k] = from_buyers.mean()
        traded[k] = True

    L = np.maximum(a, (U - phi[:, None]).max(axis=0))
    Uband = np.minimum(b, (V + psi[:, None]).min(axis=0))
    free = ~traded & marketable
    p[free] = 0.5 * (L[free] + Uband[free])
    nm = ~marketable
    p[nm] = 0.5 * (a[nm] + b[nm])
    return PriceSystem.from_base(p)


def build_allocation(inst: MarketInstance, ps: PairSurplus, flow: MatchingFlow) -> Allocation:
    m, n, K = inst.m, inst.n, inst.K
    alpha = np.zeros((m, K + 2))
    beta = np.zeros((n, K + 2))
    ii, jj = np.nonzero(flow.gamma > 0)
    g = flow.gamma[ii, jj]
    kk = ps.zstar[ii, jj]
    np.add.at(alpha, (ii, kk), g)
    np.add.at(beta, (jj, kk), g)
    # slack goes to the outside options; recomputing from the weights keeps
    # the type marginals exact
    alpha[:, inst.nod] = np.maximum(inst.consumer_weights - alpha[:, :K].sum(axis=1), 0.0)
    beta[:, inst.nos] = np.maximum(inst.producer_weights - beta[:, :K].sum(axis=1), 0.0)
    return Allocation(alpha=alpha, beta=beta)


@dataclass(frozen=True)
class PlannerSolution:
    surplus: PairSurplus
    flow: MatchingFlow
    potentials: Potentials
    price: PriceSystem
    allocation: Allocation

    @property
    def value(self) -> float:
        return self.flow.value


def solve_planner(inst: MarketInstance, tol: float = 1e-12,
                  potentials: str = "center") -> PlannerSolution:
    """Run the whole planner pipeline: surplus, matching, prices, allocation."""
    ps = pair_surplus(inst)
    flow, pot = solve_matching(inst, ps, tol=tol, potentials=potentials)
    price = recover_prices(inst, ps, flow, pot)
    alloc = build_allocation(inst, ps, flow)
    return PlannerSolution(surplus=ps, flow=flow, potentials=pot, price=price, allocation=alloc)
