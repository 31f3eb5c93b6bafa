"""The dual convex program: minimize ``I(p)`` over admissible price systems.

``I(p) = sum_i mu_i sharp_i(p) - sum_j nu_j flat_j(p)`` is convex and
piecewise linear in ``p``. A subgradient is supply minus demand on the
base qualities for any selection of demand and supply sets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .instance import MarketInstance, bid_ask
from .uconvex import PriceSystem, argmax_sets, as_values, flat, sharp

__all__ = [
    "DualState",
    "NormalConeReport",
    "DualOptions",
    "dual_objective",
    "dual_subgradient",
    "directional_derivative",
    "selection_marginals",
    "descent_subgradient",
    "minimize_dual",
    "admissible_start",
    "normal_cone_check",
    "rebalance_outside",
    "RebalanceError",
    "Z_A",
    "Z_AB",
    "Z_B",
    "M",
    "N",
]

log = logging.getLogger(__name__)

# partition labels for base qualities
Z_A = "Z_a"  # p = a < b: sellers indifferent, excess supply allowed
Z_AB = "Z_a^b"  # a < p < b: must clear exactly
Z_B = "Z^b"  # a < p = b: buyers indifferent, excess demand allowed
M = "M"  # a = p = b
N = "N"  # not marketable


@dataclass(frozen=True)
class DualState:
    """Result of a dual descent.

    Attributes
    ----------
    price : PriceSystem
    objective : float
        ``I(price)``.
    excess : ndarray
        Supply minus demand on base qualities for the selection at ``price``.
    iterations : int
    gap_estimate : float
        ``objective - target`` where the target is the planner's value.
    converged : bool
    trace : list of tuple
        ``(iter, objective, gap, step)`` rows, empty unless requested.
    """

    price: PriceSystem
    objective: float
    excess: np.ndarray
    iterations: int
    gap_estimate: float
    converged: bool = True
    trace: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class NormalConeReport:
    """Optimality conditions for a price and a supply-minus-demand vector.

    ``labels[k]`` is one of ``Z_a``, ``Z_a^b``, ``Z^b``, ``M``, ``N``;
    ``residuals[k]`` is the violation of the condition for that label.
    """

    labels: tuple
    residuals: np.ndarray
    tol: float

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max()) if self.residuals.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol

    def violations(self) -> list:
        return [k for k, r in enumerate(self.residuals) if r > self.tol]


@dataclass(frozen=True)
class DualOptions:
    """Settings for :func:`minimize_dual`.

    ``step`` is ``"polyak"`` (uses the known optimal value) or
    ``"diminishing"`` (``c / sqrt(t)`` with ``c`` the widest bid-ask band).
    ``fw_rounds`` bounds the inner search for a short subgradient (0 uses
    the plain lowest-index selection). ``deflection`` mixes in the previous
    direction when the new one turns back on it (0 disables; ignored for
    diminishing steps). ``seed``
    draws a random admissible start instead of the band midpoints.
    """

    max_iters: int = 50_000
    tol: float = 1e-6
    step: str = "polyak"  # or "diminishing"
    trace: bool = False
    fw_rounds: int = 25
    deflection: float = 1.5
    seed: int | None = None


class RebalanceError(ValueError):
    """Raised when marginals violate the sign condition on some quality."""

    def __init__(self, k: int, quality_id: str, message: str):
        super().__init__(f"quality {quality_id} (index {k}): {message}")
        self.k = k
        self.quality_id = quality_id


def dual_objective(inst: MarketInstance, p) -> float:
    """``sum_i mu_i sharp_i - sum_j nu_j flat_j``."""
    pv = as_values(inst, p)
    return float(inst.consumer_weights @ sharp(inst, pv) - inst.producer_weights @ flat(inst, pv))


def _select(mask: np.ndarray, score: np.ndarray | None, best: str) -> np.ndarray:
    """One column per row of ``mask``; lowest index, or extreme of ``score``."""
    if score is None:
        return mask.argmax(axis=1)
    if best == "min":
        s = np.where(mask, score[None, :], np.inf)
        return s.argmin(axis=1)
    s = np.where(mask, score[None, :], -np.inf)
    return s.argmax(axis=1)


def selection_marginals(inst: MarketInstance, p, tol: float = 1e-9, direction=None):
    """Demand and supply quality marginals for one pure selection.

    Without ``direction`` every agent picks the lowest index in its argmax
    set. With a direction ``phi`` over the extended set, consumers pick the
    quality minimizing ``phi`` and producers the one maximizing it, which is
    the selection realizing the one-sided derivative along ``phi``.

    Returns
    -------
    demand, supply : ndarray
        Mass per extended quality, length ``K + 2``.
    """
    sets = argmax_sets(inst, p, tol)
    phi = None if direction is None else as_values(inst, direction)
    kd = _select(sets.demand, phi, "min")
    ks = _select(sets.supply, phi, "max")
    size = inst.K + 2
    demand = np.bincount(kd, weights=inst.consumer_weights, minlength=size)
    supply = np.bincount(ks, weights=inst.producer_weights, minlength=size)
    return demand, supply


def dual_subgradient(inst: MarketInstance, p, tol: float = 1e-9, direction=None) -> np.ndarray:
    """Supply minus demand on base qualities for a pure selection."""
    demand, supply = selection_marginals(inst, p, tol, direction)
    K = inst.K
    return supply[:K] - demand[:K]


def directional_derivative(inst: MarketInstance, p, phi, tol: float = 1e-9) -> float:
    """One-sided derivative of ``I`` at ``p`` along ``phi``.

    ``phi`` must vanish at both outside options. Equals
    ``sum_j nu_j max_{S_j} phi - sum_i mu_i min_{D_i} phi``.
    """
    ph = as_values(inst, phi)
    if ph[-1] != 0 or ph[-2] != 0:
        raise ValueError("direction must vanish at the outside options")
    sets = argmax_sets(inst, p, tol)
    dmin = np.where(sets.demand, ph[None, :], np.inf).min(axis=1)
    smax = np.where(sets.supply, ph[None, :], -np.inf).max(axis=1)
    return float(inst.producer_weights @ smax - inst.consumer_weights @ dmin)


def _blocked(g, pb, lo, hi, eps):
    """Mask of coordinates where stepping along ``-g`` leaves the box."""
    return ((pb <= lo + eps) & (g > 0)) | ((pb >= hi - eps) & (g < 0))


def _near_optimal(inst: MarketInstance, pv: np.ndarray, eps: float):
    """Choice masks within ``eps`` (absolute) of each agent's optimum."""
    du = inst.extended_utilities - pv
    dv = inst.extended_costs - pv
    demand = du >= du.max(axis=1, keepdims=True) - eps
    supply = dv <= dv.min(axis=1, keepdims=True) + eps
    return demand, supply


def _selection(inst, pv, demand, supply, phi=None):
    """Excess and total choice slack of one pure selection."""
    size = inst.K + 2
    kd = _select(demand, phi, "min")
    ks = _select(supply, phi, "max")
    d = np.bincount(kd, weights=inst.consumer_weights, minlength=size)
    s = np.bincount(ks, weights=inst.producer_weights, minlength=size)
    rows_c = np.arange(inst.m)
    rows_p = np.arange(inst.n)
    du = inst.extended_utilities - pv
    dv = inst.extended_costs - pv
    slack = inst.consumer_weights @ (du.max(axis=1) - du[rows_c, kd]) \
        + inst.producer_weights @ (dv[rows_p, ks] - dv.min(axis=1))
    return s[: inst.K] - d[: inst.K], float(slack)


def descent_subgradient(inst: MarketInstance, p, lo, hi, eps: float = 0.0,
                        rounds: int = 25):
    """Approximate minimum-norm projected ``eps``-subgradient at ``p``.

    Each agent may pick any choice within ``eps`` of its optimum. A pure
    selection whose choices lose ``e`` in total against the optimum is an
    ``e``-subgradient of ``I``. Frank-Wolfe runs over the convex hull of
    such selections: the linear step picks the selection realizing the
    directional derivative along the current direction. Components pushing
    out of the box are ignored in the norm since the projection absorbs
    them anyway.

    Returns
    -------
    g : ndarray
        Supply minus demand on base qualities.
    err : float
        ``g`` is an ``err``-subgradient.
    """
    pv = as_values(inst, p)
    pb = pv[: inst.K]
    edge = 1e-12 * (1.0 + np.abs(pb))
    demand, supply = _near_optimal(inst, pv, eps)
    g, err = _selection(inst, pv, demand, supply)
    for _ in range(rounds):
        blk = _blocked(g, pb, lo, hi, edge)
        pg = np.where(blk, 0.0, g)
        if not pg.any():
            break
        s, e = _selection(inst, pv, demand, supply, np.concatenate([-pg, [0.0, 0.0]]))
        d = pg - np.where(blk, 0.0, s)
        dd = float(d @ d)
        if dd == 0.0:
            break
        gam = float(pg @ d) / dd
        if gam <= 1e-12:
            break
        gam = min(gam, 1.0)
        g = g + gam * (s - g)
        err = err + gam * (e - err)
    return g, err


def admissible_start(inst: MarketInstance, seed: int | None = None) -> np.ndarray:
    """Starting base prices: midpoint of ``[a, b]``, or uniform in it if seeded.

    Non-marketable qualities always sit at ``(a + b) / 2``, where nobody
    wants to trade them.
    """
    ba = bid_ask(inst)
    b, a = ba.bid[: inst.K], ba.ask[: inst.K]
    p = 0.5 * (a + b)
    if seed is not None:
        rng = np.random.default_rng(seed)
        mk = ba.marketable_mask[: inst.K]
        p[mk] = a[mk] + rng.random(int(mk.sum())) * (b[mk] - a[mk])
    return p


def minimize_dual(inst: MarketInstance, opts: DualOptions | None = None, *,
                  target: float | None = None, start=None) -> DualState:
    """Projected subgradient descent on ``I`` over the admissible box.

    Parameters
    ----------
    inst : MarketInstance
    opts : DualOptions, optional
    target : float, optional
        Known optimal value used for Polyak steps and the stopping test.
        Computed with the planner when omitted.
    start : array_like, optional
        Base-quality starting prices; clamped into the box.

    Returns
    -------
    DualState
        The best iterate. ``converged`` is False when the budget ran out
        before ``objective - target <= tol * (1 + |target|)``.
    """
    opts = opts or DualOptions()
    if opts.step not in ("polyak", "diminishing"):
        raise ValueError(f"unknown step rule {opts.step!r}")
    K = inst.K
    ba = bid_ask(inst)
    b, a = ba.bid[:K], ba.ask[:K]
    mk = ba.marketable_mask[:K]
    trace = []

    if not mk.any():
        p = PriceSystem.from_base(0.5 * (a + b))
        obj = dual_objective(inst, p)
        return DualState(price=p, objective=obj, excess=dual_subgradient(inst, p),
                         iterations=0, gap_estimate=obj, converged=True, trace=trace)

    if target is None:
        from .planner import solve_matching
        target = solve_matching(inst, potentials="consumer")[0].value

    lo = np.where(mk, a, 0.5 * (a + b))
    hi = np.where(mk, b, 0.5 * (a + b))
    p = admissible_start(inst, opts.seed) if start is None else np.asarray(start, float).copy()
    p = np.clip(p, lo, hi)
    thresh = opts.tol * (1.0 + abs(target))
    c0 = float((b - a)[mk].max()) or 1.0

    mass = float(inst.consumer_weights.sum() + inst.producer_weights.sum())
    edge = 1e-12 * (1.0 + np.abs(hi - lo))
    best_p, best_obj = None, np.inf
    # deflected directions only pair with steps scaled by the gap
    deflect = opts.deflection if opts.step == "polyak" else 0.0
    prev = None
    it = 0
    pv = np.concatenate([p, [0.0, 0.0]])
    for it in range(opts.max_iters + 1):
        obj = dual_objective(inst, pv)
        if obj < best_obj:
            best_p, best_obj = pv.copy(), obj
        gap = obj - target
        if best_obj - target <= thresh or it == opts.max_iters:
            if opts.trace:
                trace.append((it, obj, gap, 0.0))
            break
        # agents may deviate by gap / mass each; the actual loss is tracked
        eps = max(gap, 0.0) / mass if opts.fw_rounds else 0.0
        g, err = descent_subgradient(inst, pv, lo, hi, eps, rounds=opts.fw_rounds)
        if err > 0.5 * gap:
            g, err = descent_subgradient(inst, pv, lo, hi, 0.0, rounds=opts.fw_rounds)
        g = np.where(mk & ~_blocked(g, pv[:K], lo, hi, edge), g, 0.0)
        if prev is not None and deflect > 0:
            # damp zigzag across valley walls by bending toward the last direction
            c = float(g @ prev)
            if c < 0:
                g = g - deflect * c / float(prev @ prev) * prev
        gn = float(g @ g)
        if gn == 0.0:
            break
        prev = g
        if opts.step == "polyak":
            t = max(gap - err, 0.0) / gn
        else:
            t = c0 / np.sqrt(it + 1.0) / np.sqrt(gn)
        if opts.trace:
            trace.append((it, obj, gap, t))
        pv[:K] = np.clip(pv[:K] - t * g, lo, hi)

    best_g = dual_subgradient(inst, best_p)
    converged = bool(best_obj - target <= thresh)
    if not converged:
        log.warning("dual descent stopped after %d iterations, gap %.3g", it, best_obj - target)
    return DualState(price=PriceSystem(best_p), objective=best_obj, excess=best_g,
                     iterations=it, gap_estimate=best_obj - target,
                     converged=converged, trace=trace)


def _labels(inst: MarketInstance, p, tol: float) -> tuple:
    ba = bid_ask(inst)
    pv = as_values(inst, p)
    out = []
    for k in range(inst.K):
        a, b, q = ba.ask[k], ba.bid[k], pv[k]
        if not ba.marketable_mask[k]:
            out.append(N)
            continue
        at_a = abs(q - a) <= tol * (1.0 + abs(a))
        at_b = abs(q - b) <= tol * (1.0 + abs(b))
        if at_a and at_b:
            out.append(M)
        elif at_b:
            out.append(Z_B)
        elif at_a:
            out.append(Z_A)
        else:
            out.append(Z_AB)
    return tuple(out)


def normal_cone_check(inst: MarketInstance, p, excess, tol: float = 1e-9) -> NormalConeReport:
    """Check that ``-excess`` lies in the normal cone of the box at ``p``.

    With ``excess = supply - demand`` on base qualities the conditions are:
    ``excess <= 0`` where ``p = b`` (unmet demand is allowed),
    ``excess = 0`` strictly inside ``(a, b)`` and on non-marketable
    qualities, ``excess >= 0`` where ``p = a``, and nothing where ``a = p = b``.
    """
    e = np.asarray(excess, dtype=float)
    if e.shape != (inst.K,):
        raise ValueError(f"excess has shape {e.shape}, expected ({inst.K},)")
    labels = _labels(inst, p, tol)
    res = np.zeros(inst.K)
    for k, lab in enumerate(labels):
        if lab == Z_B:
            res[k] = max(e[k], 0.0)
        elif lab == Z_A:
            res[k] = max(-e[k], 0.0)
        elif lab in (Z_AB, N):
            res[k] = abs(e[k])
    return NormalConeReport(labels=labels, residuals=res, tol=tol)


def rebalance_outside(inst: MarketInstance, p, alpha, beta, tol: float = 1e-9):
    """Clear the market by sending surplus mass to the outside options.

    On qualities priced at the bid the unmet part of demand is moved,
    proportionally across consumers, to the consumer outside option. On
    qualities priced at the ask the unsold supply moves to the producer
    outside option. Both moves keep every agent inside its demand or supply
    set because the agents involved are indifferent.

    Parameters
    ----------
    alpha : ndarray, shape (m, K + 2)
    beta : ndarray, shape (n, K + 2)

    Returns
    -------
    alpha2, beta2 : ndarray
    """
    alpha = np.array(alpha, dtype=float)
    beta = np.array(beta, dtype=float)
    K = inst.K
    if alpha.shape != (inst.m, K + 2) or beta.shape != (inst.n, K + 2):
        raise ValueError("alpha/beta shapes do not match the instance")
    labels = _labels(inst, p, tol)
    nod, nos = inst.nod, inst.nos
    scale = 1.0 + float(max(inst.consumer_weights.sum(), inst.producer_weights.sum()))
    for k in range(K):
        d = alpha[:, k].sum()
        s = beta[:, k].sum()
        ex = d - s
        if abs(ex) <= tol * scale:
            continue
        lab = labels[k]
        qid = inst.quality_ids[k]
        if ex > 0:
            if lab not in (Z_B, M):
                raise RebalanceError(k, qid, f"excess demand {ex:.6g} but price is not at the bid")
            frac = ex / d
            moved = alpha[:, k] * frac
            alpha[:, k] -= moved
            alpha[:, nod] += moved
        else:
            if lab not in (Z_A, M):
                raise RebalanceError(k, qid, f"excess supply {-ex:.6g} but price is not at the ask")
            frac = -ex / s
            moved = beta[:, k] * frac
            beta[:, k] -= moved
            beta[:, nos] += moved
    return alpha, beta
