"""
Entropic optimal transport in five minutes
==========================================

Move mass between two small distributions, watch the regularizer trade
sharpness for smoothness, and check the solver against an exact LP.
"""

import numpy as np

from structmatch import MarginalPair, SinkhornConfig, exact_ot_oracle, sinkhorn, transport_cost

rng = np.random.default_rng(7)

# Three warehouses ship to four shops.  Cost is distance on a line.
warehouses = np.array([0.0, 1.0, 2.0])
shops = np.array([0.5, 0.9, 1.6, 2.2])
cost = np.abs(warehouses[:, None] - shops[None, :])

supply = np.array([0.5, 0.3, 0.2])
demand = np.array([0.25, 0.25, 0.25, 0.25])
mu = MarginalPair(supply, demand)

print("cost matrix:")
print(np.round(cost, 2))

# The exact optimum, from a linear program.
exact = exact_ot_oracle(cost, mu)
print("\nexact plan (LP):")
print(np.round(exact.plan, 3) + 0.0)  # +0.0 folds HiGHS's negative zeros
print("exact cost:", round(transport_cost(cost, exact), 4))

# Entropic solves: large lambda blurs the plan, small lambda sharpens it
# toward the LP vertex.
for lam in (0.5, 0.05, 0.01):
    plan = sinkhorn(cost, mu, SinkhornConfig(reg=lam, max_iters=20000, tol=1e-9))
    print(f"\nlambda={lam}: cost={transport_cost(cost, plan):.4f}  "
          f"iters={plan.iterations_used}")
    print(np.round(plan.plan, 3))

# Whatever lambda does to the geometry, the plan stays a coupling: its
# rows and columns always sum back to the marginals.
plan = sinkhorn(cost, mu, SinkhornConfig(reg=0.05, max_iters=2000))
print("\nrow sums:", np.round(plan.plan.sum(axis=1), 6))
print("col sums:", np.round(plan.plan.sum(axis=0), 6))
