"""u-convex / v-concave conjugation over the extended quality set.

All functions take a vector of values over the extended set (length
``K + 2``). A plain base vector of length ``K`` is accepted and extended with
zeros at the two outside options. Non-price vectors (for instance a
biconjugate, which is negative at the producer outside option) are accepted
as they are: conjugation is defined for any real function on ``Z``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .instance import MarketInstance

__all__ = [
    "PriceSystem",
    "ConjugateProfile",
    "ArgmaxSets",
    "as_values",
    "sharp",
    "flat",
    "biconjugates",
    "conjugate_profile",
    "argmax_sets",
    "ACTIVE",
    "INDIFFERENT",
    "INACTIVE",
]

ACTIVE = "active"
INDIFFERENT = "indifferent"
INACTIVE = "inactive"


@dataclass(frozen=True)
class PriceSystem:
    """Prices over the extended quality set, zero at both outside options."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.shape[0] < 3:
            raise ValueError("price vector must be 1-d over the extended set")
        if not np.all(np.isfinite(v)):
            raise ValueError("price vector has non-finite entries")
        if v[-2] != 0.0 or v[-1] != 0.0:
            raise ValueError("prices at the outside options must be 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_base(cls, base) -> "PriceSystem":
        base = np.asarray(base, dtype=float)
        return cls(np.concatenate([base, [0.0, 0.0]]))

    @property
    def base(self) -> np.ndarray:
        return self.values[:-2]

    def replace(self, k: int, value: float) -> "PriceSystem":
        v = self.values.copy()
        v[k] = value
        return PriceSystem(v)


PriceLike = Union[PriceSystem, np.ndarray, list, tuple]


def as_values(inst: MarketInstance, p: PriceLike) -> np.ndarray:
    """Return ``p`` as a float array of length ``K + 2``."""
    if isinstance(p, PriceSystem):
        v = p.values
    else:
        v = np.asarray(p, dtype=float)
    if v.shape == (inst.K,):
        v = np.concatenate([v, [0.0, 0.0]])
    if v.shape != (inst.K + 2,):
        raise ValueError(f"price vector has length {v.shape}, expected {inst.K} or {inst.K + 2}")
    return v


def sharp(inst: MarketInstance, p: PriceLike) -> np.ndarray:
    """Consumer indirect utility ``max_z u(x_i, z) - p(z)`` over the extended set."""
    return (inst.extended_utilities - as_values(inst, p)).max(axis=1)


def flat(inst: MarketInstance, p: PriceLike) -> np.ndarray:
    """``min_z v(y_j, z) - p(z)``; minus the producer's indirect profit."""
    return (inst.extended_costs - as_values(inst, p)).min(axis=1)


def biconjugates(inst: MarketInstance, p: PriceLike, s=None, f=None):
    """Lower and upper envelopes of ``p`` over the extended set.

    Returns ``(sharp2, flat2)`` with ``sharp2(z) = max_i u(x_i, z) - sharp_i``
    and ``flat2(z) = min_j v(y_j, z) - flat_j``. Always ``sharp2 <= p <= flat2``.
    """
    if s is None:
        s = sharp(inst, p)
    if f is None:
        f = flat(inst, p)
    sharp2 = (inst.extended_utilities - s[:, None]).max(axis=0)
    flat2 = (inst.extended_costs - f[:, None]).min(axis=0)
    return sharp2, flat2


@dataclass(frozen=True)
class ConjugateProfile:
    sharp: np.ndarray
    flat: np.ndarray
    sharp2: np.ndarray
    flat2: np.ndarray


def conjugate_profile(inst: MarketInstance, p: PriceLike) -> ConjugateProfile:
    s = sharp(inst, p)
    f = flat(inst, p)
    s2, f2 = biconjugates(inst, p, s, f)
    return ConjugateProfile(sharp=s, flat=f, sharp2=s2, flat2=f2)


@dataclass(frozen=True)
class ArgmaxSets:
    """Demand and supply sets as boolean masks over the extended set.

    ``demand[i, k]`` is True iff extended quality ``k`` maximizes
    ``u(x_i, .) - p``; ``supply[j, k]`` likewise for ``p - v(y_j, .)``.
    """

    demand: np.ndarray
    supply: np.ndarray
    consumer_activity: tuple
    producer_activity: tuple

    def demand_set(self, i: int) -> tuple:
        return tuple(int(k) for k in np.flatnonzero(self.demand[i]))

    def supply_set(self, j: int) -> tuple:
        return tuple(int(k) for k in np.flatnonzero(self.supply[j]))


def _classify(gain: np.ndarray, tol: float) -> tuple:
    thr = tol * (1.0 + np.abs(gain))
    return tuple(ACTIVE if g > t else INACTIVE if g < -t else INDIFFERENT
                 for g, t in zip(gain, thr))


def argmax_sets(inst: MarketInstance, p: PriceLike, tol: float = 1e-9) -> ArgmaxSets:
    """Demand/supply sets with relative tolerance ``tol``.

    ``k`` is in ``D(x_i)`` iff ``u(x_i, z_k) - p(z_k) >= sharp_i - tol * (1 + |sharp_i|)``.
    Activity compares the best in-market payoff (over base qualities only)
    with the reservation payoff 0, using the same relative tolerance.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    pv = as_values(inst, p)
    du = inst.extended_utilities - pv
    dv = inst.extended_costs - pv
    s = du.max(axis=1)
    f = dv.min(axis=1)
    demand = du >= (s - tol * (1.0 + np.abs(s)))[:, None]
    supply = dv <= (f + tol * (1.0 + np.abs(f)))[:, None]
    K = inst.K
    consumer_gain = du[:, :K].max(axis=1)
    producer_gain = -dv[:, :K].min(axis=1)
    return ArgmaxSets(
        demand=demand,
        supply=supply,
        consumer_activity=_classify(consumer_gain, tol),
        producer_activity=_classify(producer_gain, tol),
    )
