"""Independent ground truth: exhaustive matching and a closed-form market.

The brute-force planner recomputes pair surpluses in plain Python and
enumerates every partial matching, so it shares no code with the solvers.

The closed-form market has ``u(x, z) = -z^2/2 + x z`` and
``v(y, z) = y z^2 / 2`` on ``Z = [0, 1]`` with uniform types on
``X = [x_lo, 2]`` and ``Y = [2, 3]``. Consumer ``x`` is matched with
producer ``4 - x``; the price on the traded qualities is fixed up to an
additive constant ``c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .instance import MarketInstance

__all__ = [
    "BRUTE_FORCE_MAX_AGENTS",
    "brute_force_planner",
    "QuadraticExampleSpec",
    "quadratic_analytic",
    "demand_map",
    "supply_map",
    "traded_price",
    "consumer_indirect",
    "producer_indirect",
    "price_constant_bounds",
    "stated_constant_bounds",
    "envelope_bounds",
    "TRADED_LO",
    "TRADED_HI",
    "discretize_quadratic",
    "QuadraticSolution",
    "extract_solution",
    "AnalyticDeviation",
    "compare_to_analytic",
]

BRUTE_FORCE_MAX_AGENTS = 12


def brute_force_planner(inst: MarketInstance):
    """Best partial matching by exhaustive enumeration.

    A matched pair ``(i, j)`` earns ``max_k u[i][k] - v[j][k]``; unmatched
    agents earn 0. Pairs with negative surplus are allowed but never
    optimal, so the optimal set contains only matchings a planner could pick.

    Returns
    -------
    value : float
    matchings : list of tuple
        Every optimal matching as a sorted tuple of ``(i, j)`` pairs.

    Raises
    ------
    ValueError
        If weights are not all 1 or ``m + n`` exceeds the enumeration cap.
    """
    m, n, K = inst.m, inst.n, inst.K
    if m + n > BRUTE_FORCE_MAX_AGENTS:
        raise ValueError(f"instance too large for enumeration: m + n = {m + n}")
    if any(float(w) != 1.0 for w in inst.consumer_weights) or \
            any(float(w) != 1.0 for w in inst.producer_weights):
        raise ValueError("brute force needs unit weights")
    U = [[float(x) for x in row] for row in inst.utilities]
    V = [[float(x) for x in row] for row in inst.costs]
    w = [[max(U[i][k] - V[j][k] for k in range(K)) for j in range(n)] for i in range(m)]

    best = [0.0, [()]]

    def walk(i, used, total, pairs):
        if i == m:
            if total > best[0]:
                best[0], best[1] = total, [tuple(pairs)]
            elif total == best[0]:
                best[1].append(tuple(pairs))
            return
        walk(i + 1, used, total, pairs)
        for j in range(n):
            if not used & (1 << j):
                pairs.append((i, j))
                walk(i + 1, used | (1 << j), total + w[i][j], pairs)
                pairs.pop()

    best[1] = []
    best[0] = -math.inf
    walk(0, 0, 0.0, [])
    return best[0], sorted(best[1])


# --- closed-form market ---------------------------------------------------

TRADED_LO = 0.25
TRADED_HI = 2.0 / 3.0
_L54 = 5.0 * math.log(5.0 / 4.0)
_L53 = 5.0 * math.log(5.0 / 3.0)


def price_constant_bounds() -> tuple:
    """Range of ``c`` for which every agent weakly prefers to trade.

    The lower end leaves producer ``y = 3`` indifferent, the upper end
    consumer ``x = 1``.
    """
    return (-9.0 / 8.0 + _L54, _L54 - 1.0)


def stated_constant_bounds() -> tuple:
    """The wider interval ``[-9/8 + 5 ln(5/4), 1 + 5 ln(5/4)]`` accepted for ``c``.

    It follows from writing the consumer payoff with ``+x`` instead of
    ``-x``. Above ``price_constant_bounds()[1]`` consumer ``x = 1``
    strictly prefers to stay out, so the closed form stops being an
    equilibrium there; such constants are accepted but not used by default.
    """
    return (-9.0 / 8.0 + _L54, 1.0 + _L54)


@dataclass(frozen=True)
class QuadraticExampleSpec:
    """Parameters of the closed-form market and its grid.

    ``c`` defaults to the middle of its admissible range; when
    ``x_lo < 1`` the constant is forced to the top of the range, which
    makes consumer ``x = 1`` indifferent and prices out everyone below.
    """

    x_lo: float = 1.0
    x_hi: float = 2.0
    y_lo: float = 2.0
    y_hi: float = 3.0
    grid_n: int = 400
    c: float | None = None

    def __post_init__(self):
        if not (self.x_lo < self.x_hi and self.y_lo < self.y_hi):
            raise ValueError("intervals must be non-degenerate")
        if self.grid_n < 3:
            raise ValueError("grid_n must be at least 3")
        lo, hi = price_constant_bounds()
        if self.c is None:
            object.__setattr__(self, "c", hi if self.x_lo < 1.0 else 0.5 * (lo + hi))
        elif self.x_lo == 1.0 and not (lo - 1e-12 <= self.c <= stated_constant_bounds()[1] + 1e-12):
            raise ValueError(f"c = {self.c!r} outside [{lo!r}, {stated_constant_bounds()[1]!r}]")
        elif self.x_lo < 1.0 and abs(self.c - hi) > 1e-12:
            raise ValueError(f"with x_lo < 1 the constant must be {hi!r}")

    @property
    def closed_form(self) -> bool:
        """True when the analytic solution applies to these intervals."""
        return self.x_lo <= 1.0 and self.x_hi == 2.0 and self.y_lo == 2.0 and self.y_hi == 3.0

    @property
    def priced_out(self) -> bool:
        return self.x_lo < 1.0


def _check(val, lo, hi, name):
    a = np.asarray(val, dtype=float)
    if np.any(a < lo - 1e-12) or np.any(a > hi + 1e-12):
        raise ValueError(f"{name} outside [{lo}, {hi}]")
    return a


def demand_map(x, spec: QuadraticExampleSpec | None = None):
    """Quality bought by consumer ``x``; 0 for consumers priced out."""
    spec = spec or QuadraticExampleSpec()
    x = _check(x, spec.x_lo, 2.0, "x")
    return np.where(x >= 1.0, x / (5.0 - np.maximum(x, 1.0)), 0.0)


def supply_map(y, spec: QuadraticExampleSpec | None = None):
    """Quality sold by producer ``y``."""
    y = _check(y, 2.0, 3.0, "y")
    return (4.0 - y) / (1.0 + y)


def traded_price(z, c: float):
    """Price on the traded qualities ``[1/4, 2/3]``."""
    z = _check(z, TRADED_LO, TRADED_HI, "z")
    return -0.5 * z ** 2 + 5.0 * z - 5.0 * np.log1p(z) + c


def consumer_indirect(x, c: float):
    """Best payoff of an active consumer ``x`` in ``[1, 2]``."""
    x = _check(x, 1.0, 2.0, "x")
    return -x + 5.0 * (math.log(5.0) - np.log(5.0 - x)) - c


def producer_indirect(y, c: float):
    """Best profit of producer ``y`` in ``[2, 3]``."""
    y = _check(y, 2.0, 3.0, "y")
    return (4.0 - y) * (6.0 + y) / (2.0 * (1.0 + y)) - 5.0 * (math.log(5.0) - np.log1p(y)) + c


def envelope_bounds(z, c: float):
    """Lower and upper price bounds on untraded qualities.

    Below the traded set the bounds keep consumer ``x = 1`` and producer
    ``y = 3`` at their choices; above it, consumer ``x = 2`` and producer
    ``y = 2``. At the top of the range of ``c`` the lower bound below the
    traded set is exactly the bid of consumer ``x = 1``.
    """
    z = _check(z, 0.0, 1.0, "z")
    low = z <= TRADED_LO
    high = z >= TRADED_HI
    if np.any(~(low | high)):
        raise ValueError("z inside the traded set has no envelope")
    base1 = -5.0 * math.log(5.0 / 4.0)
    lo = np.where(low,
                  -0.5 * z ** 2 + z + 1.0 + base1 + c,
                  -0.5 * z ** 2 + 2.0 * z + 2.0 - _L53 + c)
    hi = np.where(low,
                  1.5 * z ** 2 + 9.0 / 8.0 - _L54 + c,
                  z ** 2 + 8.0 / 3.0 - _L53 + c)
    return lo, hi


def quadratic_analytic(spec: QuadraticExampleSpec, *, x=None, y=None, z=None) -> dict:
    """Evaluate the closed-form solution at the given points.

    Returns a dict with any of ``demand``, ``indirect_utility`` (for
    ``x``), ``supply``, ``indirect_profit`` (for ``y``), ``price`` (for
    traded ``z``) or ``lower``/``upper`` (for untraded ``z``), plus
    ``traded_set``, ``c`` and the two intervals for ``c``: ``c_bounds``
    (accepted) and ``c_bounds_active`` (every agent weakly prefers to trade).
    """
    out = {"traded_set": (TRADED_LO, TRADED_HI), "c": spec.c,
           "c_bounds": stated_constant_bounds(), "c_bounds_active": price_constant_bounds()}
    if x is not None:
        out["demand"] = demand_map(x, spec)
        xa = np.asarray(x, dtype=float)
        act = np.clip(xa, 1.0, 2.0)
        out["indirect_utility"] = np.where(xa >= 1.0, consumer_indirect(act, spec.c), 0.0)
    if y is not None:
        out["supply"] = supply_map(y, spec)
        out["indirect_profit"] = producer_indirect(y, spec.c)
    if z is not None:
        za = np.asarray(z, dtype=float)
        if np.all((za >= TRADED_LO) & (za <= TRADED_HI)):
            out["price"] = traded_price(za, spec.c)
        else:
            out["lower"], out["upper"] = envelope_bounds(za, spec.c)
    return out


def discretize_quadratic(spec: QuadraticExampleSpec) -> MarketInstance:
    """Finite market on uniform grids (endpoints included).

    Each node carries weight ``interval length / grid_n``. Gradients are
    ``D_x u = z`` and ``D_y v = z^2 / 2``.
    """
    g = spec.grid_n
    x = np.linspace(spec.x_lo, spec.x_hi, g)
    y = np.linspace(spec.y_lo, spec.y_hi, g)
    z = np.linspace(0.0, 1.0, g)
    U = -0.5 * z[None, :] ** 2 + x[:, None] * z[None, :]
    V = 0.5 * y[:, None] * z[None, :] ** 2
    mu = np.full(g, (spec.x_hi - spec.x_lo) / g)
    nu = np.full(g, (spec.y_hi - spec.y_lo) / g)
    cg = np.broadcast_to(z[None, :, None], (g, g, 1)).copy()
    pg = np.broadcast_to(0.5 * z[None, :, None] ** 2, (g, g, 1)).copy()
    return MarketInstance.from_arrays(
        U, V, mu, nu,
        consumer_ids=[f"x{i}" for i in range(g)],
        producer_ids=[f"y{j}" for j in range(g)],
        quality_ids=[f"z{k}" for k in range(g)],
        quality_coords=z[:, None],
        consumer_gradients=cg,
        producer_gradients=pg,
    )


@dataclass(frozen=True)
class QuadraticSolution:
    """Grid solution summarized per agent.

    ``demand[i]`` is the mass-weighted mean quality bought by consumer
    ``i`` (NaN when the consumer does not trade); likewise ``supply``.
    ``traded[k]`` marks qualities with positive demand mass.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    demand: np.ndarray
    supply: np.ndarray
    traded: np.ndarray
    price: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray


def extract_solution(spec: QuadraticExampleSpec, inst: MarketInstance, price, alpha, beta,
                     tol: float = 1e-12) -> QuadraticSolution:
    """Turn grid prices and distributions into per-agent quality maps."""
    g = spec.grid_n
    x = np.linspace(spec.x_lo, spec.x_hi, g)
    y = np.linspace(spec.y_lo, spec.y_hi, g)
    z = np.linspace(0.0, 1.0, g)
    K = inst.K
    alpha = np.asarray(alpha, float)
    beta = np.asarray(beta, float)
    a_in = alpha[:, :K]
    b_in = beta[:, :K]
    ma = a_in.sum(axis=1)
    mb = b_in.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        demand = np.where(ma > tol * inst.consumer_weights, (a_in @ z) / ma, np.nan)
        supply = np.where(mb > tol * inst.producer_weights, (b_in @ z) / mb, np.nan)
    pv = np.asarray(getattr(price, "values", price), float)[:K]
    traded = a_in.sum(axis=0) > tol * float(inst.consumer_weights.max())
    return QuadraticSolution(x=x, y=y, z=z, demand=demand, supply=supply, traded=traded,
                             price=pv, alpha=alpha, beta=beta)


@dataclass(frozen=True)
class AnalyticDeviation:
    """Distance between a grid solution and the closed form.

    Errors are sup-norms. ``c_hat`` is the least-squares constant matching
    the grid prices to the traded-price formula on traded qualities.
    """

    grid_step: float
    demand_error: float
    supply_error: float
    traded_lo: float
    traded_hi: float
    endpoint_error: float
    c_hat: float
    c_in_bounds: bool
    price_error: float
    priced_out_fraction: float | None
    producers_active: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compare_to_analytic(spec: QuadraticExampleSpec, sol: QuadraticSolution) -> AnalyticDeviation:
    """Compare a grid solution with the closed-form equilibrium."""
    if not spec.closed_form:
        raise ValueError("closed form only covers X = [x_lo <= 1, 2], Y = [2, 3]")
    step = 1.0 / (spec.grid_n - 1)
    act = sol.x >= 1.0
    d_ref = demand_map(sol.x, spec)
    d_err = np.abs(sol.demand - d_ref)[act & ~np.isnan(sol.demand)]
    # an active consumer left without trade counts as a full miss
    missing = act & np.isnan(sol.demand)
    demand_error = float(max(d_err.max(initial=0.0), d_ref[missing].max(initial=0.0)))
    s_ref = supply_map(sol.y, spec)
    s_ok = ~np.isnan(sol.supply)
    supply_error = float(max(np.abs(sol.supply - s_ref)[s_ok].max(initial=0.0),
                             s_ref[~s_ok].max(initial=0.0)))
    tz = sol.z[sol.traded]
    tz_pos = tz[tz > 0.0] if spec.priced_out else tz
    if tz_pos.size:
        t_lo, t_hi = float(tz_pos.min()), float(tz_pos.max())
    else:
        t_lo = t_hi = math.nan
    endpoint_error = max(abs(t_lo - TRADED_LO), abs(t_hi - TRADED_HI))

    inside = sol.traded & (sol.z >= TRADED_LO) & (sol.z <= TRADED_HI)
    if inside.any():
        shape = traded_price(sol.z[inside], 0.0)
        resid = sol.price[inside] - shape
        c_hat = float(resid.mean())
        price_error = float(np.abs(resid - c_hat).max())
    else:
        c_hat = price_error = math.nan
    lo, hi = price_constant_bounds()
    # a grid can only pin c down to within the discretization error
    c_in = bool(lo - price_error - step <= c_hat <= hi + price_error + step)

    frac = None
    if spec.priced_out:
        low = sol.x < 1.0
        mass = float(sol.alpha[low].sum())
        out = float(sol.alpha[low, -2].sum() + sol.alpha[low, 0].sum())
        frac = out / mass if mass > 0 else 1.0
    producers_active = bool(np.all(sol.beta[:, :-2].sum(axis=1) > 0.5 * sol.beta.sum(axis=1)))
    return AnalyticDeviation(
        grid_step=step,
        demand_error=demand_error,
        supply_error=supply_error,
        traded_lo=t_lo,
        traded_hi=t_hi,
        endpoint_error=float(endpoint_error),
        c_hat=c_hat,
        c_in_bounds=c_in,
        price_error=price_error,
        priced_out_fraction=frac,
        producers_active=producers_active,
    )
