"""
Two equilibria, one surplus
===========================

Two consumers, three producers and three qualities. The planner's optimum
can be supported by a whole segment of price systems; its two ends are the
consumer-best and producer-best prices.
"""

import numpy as np

from hedonic import MarketInstance
from hedonic.planner import solve_planner
from hedonic.uconvex import argmax_sets
from hedonic.verify import quasi_uniqueness_check, uniqueness_ranges, verify_equilibrium

U = [[2.0, 1.0, 0.1],
     [3.0, 2.0, 0.1]]
V = [[0.0, 5.0, 5.0],
     [5.0, 0.0, 5.0],
     [5.0, 5.0, 0.0]]
inst = MarketInstance.from_arrays(U, V, consumer_ids=["x1", "x2"], producer_ids=["y1", "y2", "y3"],
                                  quality_ids=["z1", "z2", "z3"])

# the optimal matching pairs both consumers with the first two producers
sol = {which: solve_planner(inst, potentials=which) for which in ("consumer", "producer", "center")}
print("planner surplus:", sol["center"].value)
for which, s in sol.items():
    print(f"{which:>8} prices:", np.round(s.price.base, 12))

# every one of these price systems clears the market with the same allocation
al = sol["center"].allocation
for which, s in sol.items():
    rep = verify_equilibrium(inst, s.price, al.alpha, al.beta)
    print(f"{which:>8} verifies: {rep.passed}  (largest residual {rep.max_residual:.1e})")

# at the consumer-best prices the first consumer is indifferent between z1 and z2,
# which is why swapping partners is also an equilibrium
sets = argmax_sets(inst, sol["consumer"].price)
print("D(x1) =", [inst.extended_ids()[k] for k in sets.demand_set(0)])

swapped = al.alpha[:, [1, 0, 2, 3, 4]]
eq1 = (sol["consumer"].price, al.alpha, al.beta)
eq2 = (sol["producer"].price, swapped, al.beta)
print("swapped allocation verifies at producer-best prices:",
      verify_equilibrium(inst, *eq2).passed)
print("quasi-uniqueness between the two:", quasi_uniqueness_check(inst, eq1, eq2).passed)

# z3 is never traded; its price is pinned only by the bands below
r = uniqueness_ranges(inst, *eq1)
for k, q in enumerate(inst.quality_ids):
    print(f"{q}: [{r.lower[k]:.3g}, {r.upper[k]:.3g}]  traded={bool(r.traded[k])}")
