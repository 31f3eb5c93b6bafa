"""
A market with a closed-form equilibrium
=======================================

Consumers x in [1, 2] with u(x, z) = -z^2/2 + x z, producers y in [2, 3]
with v(y, z) = y z^2 / 2, qualities z in [0, 1]. The continuum equilibrium
is known in closed form; here a grid version is solved exactly and compared.
"""

import numpy as np

from hedonic.oracle import (QuadraticExampleSpec, compare_to_analytic, demand_map, discretize_quadratic,
                            extract_solution)
from hedonic.planner import solve_planner

for grid in (50, 100, 200):
    spec = QuadraticExampleSpec(grid_n=grid)
    inst = discretize_quadratic(spec)
    sol = solve_planner(inst)
    qs = extract_solution(spec, inst, sol.price, sol.allocation.alpha, sol.allocation.beta)
    dev = compare_to_analytic(spec, qs)
    print(f"grid {grid:4d}: traded [{dev.traded_lo:.4f}, {dev.traded_hi:.4f}]  "
          f"demand error {dev.demand_error:.1e}  c_hat {dev.c_hat:.4f}  price error {dev.price_error:.1e}")

# the solved demand map next to x / (5 - x) on the last grid
print("\n     x   solved   exact")
for i in np.linspace(0, grid - 1, 6).astype(int):
    print(f"{qs.x[i]:6.3f}  {qs.demand[i]:.4f}  {float(demand_map(qs.x[i])):.4f}")

# extending the consumer interval down to 0.5: the new consumers buy nothing
spec = QuadraticExampleSpec(x_lo=0.5, grid_n=100)
inst = discretize_quadratic(spec)
sol = solve_planner(inst)
qs = extract_solution(spec, inst, sol.price, sol.allocation.alpha, sol.allocation.beta)
dev = compare_to_analytic(spec, qs)
print(f"\nx in [0.5, 2]: share of consumers below 1 priced out = {dev.priced_out_fraction:.3f}, "
      f"all producers active = {dev.producers_active}")
