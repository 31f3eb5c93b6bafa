"""Hedonic market equilibria for finitely many consumer and producer types.

Two independent routes reach the same equilibrium: an exact surplus
maximizing matching (``planner``) and descent on the convex dual in
prices (``dualsolve``). ``verify`` checks any candidate against the
equilibrium conditions and ``oracle`` provides ground truth.
"""

from .dualsolve import (DualOptions, DualState, NormalConeReport, dual_objective, dual_subgradient,
                        directional_derivative, minimize_dual, normal_cone_check, rebalance_outside)
from .instance import (NONE_D, NONE_S, BidAskCurves, InstanceError, MarketInstance, bid_ask,
                       dump_instance, load_instance, read_instance)
from .planner import Allocation, PlannerSolution, solve_matching, solve_planner
from .uconvex import ArgmaxSets, PriceSystem, argmax_sets, biconjugates, conjugate_profile, flat, sharp
from .verify import (EquilibriumReport, UniquenessRange, perturb_and_recheck, purity_check,
                     quasi_uniqueness_check, single_quality_check, surplus, uniqueness_ranges,
                     verify_equilibrium)

__version__ = "0.1.0"
