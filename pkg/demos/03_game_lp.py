"""Game-theoretic obfuscation on a tiny joint distribution.

For a small secret/public joint, the optimal obfuscation matrix is the
solution of a linear program. A grid search over 2x2 stochastic matrices
confirms the answer and shows how privacy improves with the utility budget.
"""
import numpy as np

from attrishield.gametheory import brute_force_game, solve_game_lp, zero_one_loss

joint = np.array([[0.4, 0.1], [0.1, 0.4]])
d_p = zero_one_loss(2)  # privacy gain for an exact guess
d_q = 1.0 - np.eye(2)   # utility cost of publishing a different value

for beta in (0.0, 0.1, 0.25, 0.5):
    f, obj = solve_game_lp(joint, d_p, d_q, beta)
    _, bf = brute_force_game(joint, d_p, d_q, beta, 0.01)
    print(f"beta={beta:<4} attacker success {obj:.4f} (grid {bf:.4f})\n{np.round(f.f, 3)}")
# with a large budget the attacker can do no better than guessing the more
# likely secret, which here succeeds half the time
