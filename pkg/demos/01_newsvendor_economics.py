"""Walk through the core economics: profit, critical fractiles, optima.

Run:  python demos/01_newsvendor_economics.py
"""

import numpy as np

from nvlab import (
    CostStructure,
    critical_fractile,
    expected_profit,
    optimal_quantity,
    profit,
    scenario,
    support_pmf,
)

# One selling season: order q, demand d realizes, leftovers are worthless.
high = CostStructure(price=12, cost=3)
low = CostStructure(price=12, cost=9)

print("profit(q=185, d=210) at c=3:", profit(185, 210, high), "francs")
print("profit(q=100, d=50)  at c=9:", profit(100, 50, low), "francs")
print()

# The critical fractile (p - c) / p is the service level the optimal order hits.
print("critical fractile, high margin:", critical_fractile(high))
print("critical fractile, low margin: ", critical_fractile(low))
print()

# Optimal integer orders per demand model and margin.
print(f"{'variant':<18}{'distribution':<20}{'q* high':>8}{'q* low':>8}")
for experiment, kinds in (
    ("E1-baseline", ("uniform", "truncated-normal", "lognormal")),
    ("E3-risk-neutral", ("uniform", "truncated-normal")),
):
    for kind in kinds:
        q_high = optimal_quantity(scenario(experiment, "high", kind))
        q_low = optimal_quantity(scenario(experiment, "low", kind))
        print(f"{experiment:<18}{kind:<20}{q_high:>8}{q_low:>8}")
print()

# Expected profit is an exact sum over the integer demand support; the optimum
# should sit on top of the whole curve.
sc = scenario("E1-baseline", "high", "uniform")
support, _ = support_pmf(sc.demand)
curve = np.array([expected_profit(int(q), sc) for q in support])
q_star = optimal_quantity(sc)
print("uniform high margin:")
print("  E[profit] at q* =", q_star, "->", round(expected_profit(q_star, sc), 2), "francs")
print("  E[profit] at the demand mean 150 ->", round(expected_profit(150, sc), 2), "francs")
print("  exhaustive scan max:", round(float(curve.max()), 2),
      "at q =", int(support[int(curve.argmax())]))

# In the low-margin baseline, over-ordering can lose money in expectation.
sc_low = scenario("E1-baseline", "low", "uniform")
print("uniform low margin:")
print("  E[profit] at q* = 75  ->", round(expected_profit(75, sc_low), 2), "francs")
print("  E[profit] at q = 300 ->", round(expected_profit(300, sc_low), 2), "francs (a loss)")
