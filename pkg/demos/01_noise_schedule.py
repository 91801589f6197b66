"""Mask-and-uniform corruption of a token grid, step by step.

Run:  python3 demos/01_noise_schedule.py
"""
import numpy as np

from vqbwe import d3pm
from vqbwe.schedule import cumulative_transition, linear_schedule, transition_matrix

K, T = 8, 100
s = linear_schedule(T, K, gamma_max=0.9, beta_max=0.1, beta_is_total=True)

# one step: columns are "from", rows are "to"; the last state is [MASK]
Q5 = transition_matrix(s, 5)
print("Q_5 column sums:", Q5.sum(axis=0).round(12))
print("Q_5[:, 0] =", Q5[:, 0].round(4))

# how fast does information disappear?
for t in (1, 5, 10, 20, 35, 50, 100):
    stay, unif, mask = s.cumulative_coefficients(t)
    print(f"t={t:3d}  keep={stay + unif:.4f}  resampled={K * unif - unif:.2e}  masked={mask:.4f}")

# the closed form agrees with multiplying the matrices out
P = np.eye(K + 1)
for t in range(1, 21):
    P = transition_matrix(s, t) @ P
print("max |closed form - product| at t=20:", np.abs(cumulative_transition(s, 20) - P).max())

# corrupt a small grid (frames x codebooks); K marks a masked position
x0 = np.random.default_rng(0).integers(0, K, (6, 3))
for t in (1, 10, 30):
    print(f"x_{t}:\n", d3pm.sample_forward(x0, t, s, seed=t))
