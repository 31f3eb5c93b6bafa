"""
Minimizing the dual by projected subgradient descent
====================================================

The dual objective I(p) is convex and piecewise linear. Its minimum over the
box of admissible prices equals the planner's surplus. This script watches
the descent close that gap on a random market, then checks the optimality
conditions at the price it found.
"""

import numpy as np

from hedonic import MarketInstance
from hedonic.dualsolve import DualOptions, minimize_dual, normal_cone_check
from hedonic.planner import solve_planner
from hedonic.verify import verify_equilibrium

rng = np.random.default_rng(7)
m, n, K = 10, 9, 6
inst = MarketInstance.from_arrays(rng.uniform(-5, 5, (m, K)), rng.uniform(-5, 5, (n, K)),
                                  rng.uniform(0.5, 1.5, m), rng.uniform(0.5, 1.5, n))

value = solve_planner(inst).value
print(f"planner surplus {value:.10f}")

st = minimize_dual(inst, DualOptions(tol=1e-9, trace=True), target=value)
print(f"dual minimum    {st.objective:.10f} after {st.iterations} iterations (converged: {st.converged})")

# a few rows of the trace: iteration, objective, gap, step length
for it, obj, gap, step in st.trace[:: max(1, len(st.trace) // 8)]:
    print(f"  iter {it:5d}  I = {obj:.8f}  gap = {gap:.2e}  step = {step:.2e}")

# at a kink the lowest-index selection is just one subgradient among many,
# so its excess need not satisfy the optimality conditions
rep = normal_cone_check(inst, st.price, st.excess, tol=1e-6)
print("labels:", rep.labels)
print(f"lowest-index selection: normal-cone residual {rep.max_residual:.1e}")

# the planner's allocation is another selection at the same price; it clears
# the market, so its excess is zero and sits in the normal cone
al = solve_planner(inst).allocation
excess = al.beta[:, :K].sum(axis=0) - al.alpha[:, :K].sum(axis=0)
rep = normal_cone_check(inst, st.price, excess, tol=1e-6)
print(f"clearing selection:     normal-cone residual {rep.max_residual:.1e}  passed: {rep.passed}")
print("dual price + planner allocation is an equilibrium:",
      verify_equilibrium(inst, st.price, al.alpha, al.beta, tol=1e-6).passed)
