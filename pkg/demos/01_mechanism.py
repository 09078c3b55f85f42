"""Choosing a noise distribution under a budget.

Each candidate noise vector would make the defender's classifier output one
particular label. Given the cost of each candidate and a target label
distribution p, the solver picks the distribution M closest to p in KL that
stays within the expected-cost budget.
"""
import numpy as np

from attrishield import kl_divergence, solve_mechanism
from attrishield.core import InfiniteDivergenceError

# %% A two-label case small enough to check by hand
p = [0.5, 0.5]
costs = [0, 10]  # keeping the predicted label is free
for beta in (0, 1, 2, 5, 10):
    mech, rep = solve_mechanism(p, costs, beta)
    try:
        kl = kl_divergence(p, mech.M)
    except InfiniteDivergenceError:
        kl = np.inf  # a zero budget leaves only the free label
    print(f"beta={beta:>2}  M={np.round(mech.M, 4)}  KL={kl:.4f}  binding={rep.binding}")

# %% Five labels with uneven costs
p = np.full(5, 0.2)
costs = np.array([0.0, 2.0, 3.0, 5.0, 9.0])
print("\nunconstrained expected cost:", p @ costs)
for beta in (0.5, 1.0, 2.0, 3.0, 3.8):
    mech, rep = solve_mechanism(p, costs, beta)
    print(f"beta={beta:<4} M={np.round(mech.M, 3)}  spend={mech.M @ costs:.3f}  mu0={rep.mu0:.4f}")
# cheap labels absorb more mass as the budget tightens; once beta reaches
# p @ costs the budget stops binding and M equals p
