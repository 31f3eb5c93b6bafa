"""Equilibrium checks for a price system and a pair of distributions.

Distributions are mass matrices over the extended quality set:
``alpha`` is (m, K + 2) for consumers and ``beta`` is (n, K + 2) for
producers. "Almost every" statements become mass thresholds: an entry
carries mass when it exceeds ``tol`` times the agent's weight.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .dualsolve import dual_objective
from .instance import MarketInstance, bid_ask
from .uconvex import argmax_sets, as_values, biconjugates, flat, sharp

__all__ = [
    "EquilibriumReport",
    "UniquenessRange",
    "QuasiUniquenessReport",
    "PurityReport",
    "SingleQualityReport",
    "verify_equilibrium",
    "surplus",
    "uniqueness_ranges",
    "perturb_and_recheck",
    "quasi_uniqueness_check",
    "purity_check",
    "single_quality_check",
    "quality_table",
    "write_quality_csv",
    "QUALITY_CSV_FIELDS",
]


def _as_mass(inst: MarketInstance, alpha, beta):
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if alpha.shape != (inst.m, inst.K + 2):
        raise ValueError(f"alpha has shape {alpha.shape}, expected ({inst.m}, {inst.K + 2})")
    if beta.shape != (inst.n, inst.K + 2):
        raise ValueError(f"beta has shape {beta.shape}, expected ({inst.n}, {inst.K + 2})")
    return alpha, beta


@dataclass(frozen=True)
class EquilibriumReport:
    """Residuals of every equilibrium condition.

    Attributes
    ----------
    admissibility_residual : float
        Largest excursion of the price outside ``[a, b]`` on marketable qualities.
    support_residual : float
        Largest payoff shortfall of a mass-carrying choice against the
        agent's best payoff.
    marginal_residual : float
        Largest mismatch between a row sum and the agent's weight, or the
        most negative mass entry.
    clearing_residual : float
        Largest gap between demand and supply on a base quality.
    surplus : float
    duality_gap : float
        ``I(p) - surplus``; nonnegative for any feasible allocation.
    consumer_activity, producer_activity : tuple of str
    tol : float
    """

    admissibility_residual: float
    support_residual: float
    marginal_residual: float
    clearing_residual: float
    surplus: float
    duality_gap: float
    consumer_activity: tuple
    producer_activity: tuple
    tol: float

    @property
    def residuals(self) -> dict:
        return {
            "admissibility": self.admissibility_residual,
            "support": self.support_residual,
            "marginal": self.marginal_residual,
            "clearing": self.clearing_residual,
        }

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "admissibility_residual": self.admissibility_residual,
            "support_residual": self.support_residual,
            "marginal_residual": self.marginal_residual,
            "clearing_residual": self.clearing_residual,
            "surplus": self.surplus,
            "duality_gap": self.duality_gap,
        }


def surplus(inst: MarketInstance, alpha, beta) -> float:
    """Aggregate utility minus aggregate cost; outside options contribute 0."""
    alpha, beta = _as_mass(inst, alpha, beta)
    return float((alpha * inst.extended_utilities).sum() - (beta * inst.extended_costs).sum())


def verify_equilibrium(inst: MarketInstance, p, alpha, beta, tol: float = 1e-9) -> EquilibriumReport:
    """Evaluate every equilibrium condition for ``(p, alpha, beta)``.

    Never raises on a bad equilibrium; the verdict is ``report.passed``.
    """
    alpha, beta = _as_mass(inst, alpha, beta)
    pv = as_values(inst, p)
    K = inst.K
    ba = bid_ask(inst)
    mk = ba.marketable_mask[:K]
    pb = pv[:K]
    adm = np.maximum.reduce([ba.ask[:K] - pb, pb - ba.bid[:K], np.zeros(K)])
    adm_res = float(adm[mk].max()) if mk.any() else 0.0

    s = sharp(inst, pv)
    f = flat(inst, pv)
    short_c = s[:, None] - (inst.extended_utilities - pv)
    short_p = (inst.extended_costs - pv) - f[:, None]
    carry_c = alpha > tol * inst.consumer_weights[:, None]
    carry_p = beta > tol * inst.producer_weights[:, None]
    sup_res = 0.0
    if carry_c.any():
        sup_res = max(sup_res, float(short_c[carry_c].max()))
    if carry_p.any():
        sup_res = max(sup_res, float(short_p[carry_p].max()))

    marg = [np.abs(alpha.sum(axis=1) - inst.consumer_weights),
            np.abs(beta.sum(axis=1) - inst.producer_weights),
            -alpha.ravel(), -beta.ravel(), np.zeros(1)]
    marg_res = float(max(x.max() for x in marg if x.size))

    clear = np.abs(alpha[:, :K].sum(axis=0) - beta[:, :K].sum(axis=0))
    clear_res = float(clear.max()) if K else 0.0

    j = surplus(inst, alpha, beta)
    sets = argmax_sets(inst, pv, tol)
    return EquilibriumReport(
        admissibility_residual=adm_res,
        support_residual=max(sup_res, 0.0),
        marginal_residual=marg_res,
        clearing_residual=clear_res,
        surplus=j,
        duality_gap=dual_objective(inst, pv) - j,
        consumer_activity=sets.consumer_activity,
        producer_activity=sets.producer_activity,
        tol=tol,
    )


@dataclass(frozen=True)
class UniquenessRange:
    """Per base quality, the interval the price may move in without
    disturbing the equilibrium: ``[max(a, p##), min(b, p**)]``."""

    lower: np.ndarray
    upper: np.ndarray
    traded: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def uniqueness_ranges(inst: MarketInstance, p, alpha, beta, tol: float = 1e-9) -> UniquenessRange:
    """Price ranges per base quality; ``traded`` iff demand mass exceeds ``tol``."""
    alpha, beta = _as_mass(inst, alpha, beta)
    K = inst.K
    ba = bid_ask(inst)
    s2, f2 = biconjugates(inst, p)
    lower = np.maximum(ba.ask[:K], s2[:K])
    upper = np.minimum(ba.bid[:K], f2[:K])
    traded = alpha[:, :K].sum(axis=0) > tol
    return UniquenessRange(lower=lower, upper=upper, traded=traded)


def perturb_and_recheck(inst: MarketInstance, p, alpha, beta, k: int, q: float,
                        tol: float = 1e-9) -> bool:
    """Move the price of quality ``k`` to ``q`` and re-verify the same allocation.

    Raises
    ------
    ValueError
        If ``q`` lies outside the closed range ``[lower, upper]`` (widened
        by ``tol``) for quality ``k``.
    """
    pv = np.array(as_values(inst, p), dtype=float)
    rng = uniqueness_ranges(inst, pv, alpha, beta, tol)
    lo, hi = rng.lower[k], rng.upper[k]
    slack = tol * (1.0 + max(abs(lo), abs(hi)))
    if not (lo - slack <= q <= hi + slack):
        raise ValueError(f"price {q!r} for quality {inst.quality_ids[k]} outside range [{lo!r}, {hi!r}]")
    pv[k] = q
    return verify_equilibrium(inst, pv, alpha, beta, tol).passed


@dataclass(frozen=True)
class QuasiUniquenessReport:
    """Mass each equilibrium puts outside the other's demand/supply sets.

    ``consumer_violation[i]`` is the larger of the two directions, as a
    fraction of ``mu_i``; likewise for producers.
    """

    consumer_violation: np.ndarray
    producer_violation: np.ndarray
    tol: float

    @property
    def passed(self) -> bool:
        worst = 0.0
        for v in (self.consumer_violation, self.producer_violation):
            if v.size:
                worst = max(worst, float(v.max()))
        return worst <= self.tol


def _outside_mass(inst, p, alpha, beta, tol):
    sets = argmax_sets(inst, p, tol)
    out_c = np.where(sets.demand, 0.0, alpha).sum(axis=1) / inst.consumer_weights
    out_p = np.where(sets.supply, 0.0, beta).sum(axis=1) / inst.producer_weights
    return out_c, out_p


def quasi_uniqueness_check(inst: MarketInstance, eq1, eq2, tol: float = 1e-9) -> QuasiUniquenessReport:
    """Each equilibrium's allocation must be carried by the other's choice sets.

    ``eq1`` and ``eq2`` are ``(p, alpha, beta)`` triples.
    """
    p1, a1, b1 = eq1
    p2, a2, b2 = eq2
    a1, b1 = _as_mass(inst, a1, b1)
    a2, b2 = _as_mass(inst, a2, b2)
    c12, p12 = _outside_mass(inst, p1, a2, b2, tol)
    c21, p21 = _outside_mass(inst, p2, a1, b1, tol)
    return QuasiUniquenessReport(
        consumer_violation=np.maximum(c12, c21),
        producer_violation=np.maximum(p12, p21),
        tol=tol,
    )


@dataclass(frozen=True)
class PurityReport:
    """Whether every agent has at most one best in-market quality.

    ``spence_mirrlees`` is None unless gradients were checked; then it is
    True iff for every agent the gradient vectors over qualities are
    pairwise distinct.
    """

    consumer_pure: np.ndarray
    producer_pure: np.ndarray
    spence_mirrlees: bool | None = None
    consumer_sm: np.ndarray | None = None
    producer_sm: np.ndarray | None = None

    @property
    def pure(self) -> bool:
        return bool(self.consumer_pure.all() and self.producer_pure.all())


def _pairwise_distinct(grads: np.ndarray, tol: float) -> np.ndarray:
    """Per row, whether the (K, d) gradient vectors are pairwise > tol apart."""
    rows, K = grads.shape[:2]
    out = np.ones(rows, dtype=bool)
    if K < 2:
        return out
    if grads.shape[2] == 1:
        g = np.sort(grads[:, :, 0], axis=1)
        return np.diff(g, axis=1).min(axis=1) > tol
    iu = np.triu_indices(K, 1)
    for r in range(rows):
        g = grads[r]
        d = np.sqrt(((g[:, None, :] - g[None, :, :]) ** 2).sum(axis=2))
        out[r] = d[iu].min() > tol
    return out


def purity_check(inst: MarketInstance, p, tol: float = 1e-9, gradients: bool = False) -> PurityReport:
    """Count best in-market qualities per agent; optionally test gradients.

    Raises
    ------
    ValueError
        If ``gradients`` is requested and the instance carries none.
    """
    sets = argmax_sets(inst, p, tol)
    K = inst.K
    cp = sets.demand[:, :K].sum(axis=1) <= 1
    pp = sets.supply[:, :K].sum(axis=1) <= 1
    if not gradients:
        return PurityReport(consumer_pure=cp, producer_pure=pp)
    if inst.consumer_gradients is None or inst.producer_gradients is None:
        raise ValueError("gradients requested but the instance has none")
    csm = _pairwise_distinct(np.asarray(inst.consumer_gradients, float), tol)
    psm = _pairwise_distinct(np.asarray(inst.producer_gradients, float), tol)
    return PurityReport(consumer_pure=cp, producer_pure=pp,
                        spence_mirrlees=bool(csm.all() and psm.all()),
                        consumer_sm=csm, producer_sm=psm)


@dataclass(frozen=True)
class SingleQualityReport:
    """Agent masses by position relative to the price of the only quality.

    Consumers: ``below`` (u < p, stay out), ``equal``, ``above`` (buy).
    Producers: ``above`` (v > p, stay out), ``equal``, ``below`` (sell).
    """

    consumers_below: float
    consumers_equal: float
    consumers_above: float
    producers_above: float
    producers_equal: float
    producers_below: float

    @property
    def passed(self) -> bool:
        # eager buyers must find sellers willing at p, and eager sellers buyers
        ok_buy = self.consumers_above <= self.producers_equal + self.producers_below
        ok_sell = self.producers_below <= self.consumers_equal + self.consumers_above
        return bool(ok_buy and ok_sell)


def single_quality_check(inst: MarketInstance, p, tol: float = 1e-9) -> SingleQualityReport:
    """Counting conditions for an equilibrium when there is one quality."""
    if inst.K != 1:
        raise ValueError(f"single_quality_check needs exactly one quality, got {inst.K}")
    q = float(as_values(inst, p)[0])
    u = inst.utilities[:, 0]
    v = inst.costs[:, 0]
    eu = np.abs(u - q) <= tol * (1.0 + abs(q))
    ev = np.abs(v - q) <= tol * (1.0 + abs(q))
    mu, nu = inst.consumer_weights, inst.producer_weights
    return SingleQualityReport(
        consumers_below=float(mu[(u < q) & ~eu].sum()),
        consumers_equal=float(mu[eu].sum()),
        consumers_above=float(mu[(u > q) & ~eu].sum()),
        producers_above=float(nu[(v > q) & ~ev].sum()),
        producers_equal=float(nu[ev].sum()),
        producers_below=float(nu[(v < q) & ~ev].sum()),
    )


QUALITY_CSV_FIELDS = ("quality", "a", "b", "p", "p_lower_env", "p_upper_env", "demand", "supply")


def quality_table(inst: MarketInstance, p, alpha, beta) -> list:
    """Per base quality: ask, bid, price, both envelopes, demand and supply mass."""
    alpha, beta = _as_mass(inst, alpha, beta)
    pv = as_values(inst, p)
    ba = bid_ask(inst)
    s2, f2 = biconjugates(inst, pv)
    dz = alpha.sum(axis=0)
    sz = beta.sum(axis=0)
    return [
        (inst.quality_ids[k], float(ba.ask[k]), float(ba.bid[k]), float(pv[k]),
         float(s2[k]), float(f2[k]), float(dz[k]), float(sz[k]))
        for k in range(inst.K)
    ]


def write_quality_csv(inst: MarketInstance, p, alpha, beta, fp=None) -> str:
    """Write the per-quality table as CSV; returns the text when ``fp`` is None."""
    buf = io.StringIO() if fp is None else fp
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(QUALITY_CSV_FIELDS)
    for row in quality_table(inst, p, alpha, beta):
        w.writerow([row[0]] + [repr(x) for x in row[1:]])
    return buf.getvalue() if fp is None else ""
