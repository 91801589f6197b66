"""Exact denoiser on a 3-symbol toy distribution: the reverse chain recovers the data law.

Run:  python3 demos/03_tabular_reverse_chain.py
"""
import numpy as np

from vqbwe import d3pm
from vqbwe.nn.tabular import TabularDenoiser
from vqbwe.schedule import linear_schedule

s = linear_schedule(100, 3, gamma_max=0.9, beta_max=0.1, beta_is_total=True)
pi = np.array([0.5, 0.3, 0.2])
den = TabularDenoiser(s).fit(np.repeat([0, 1, 2], [5, 3, 2])[:, None])

# p(x0 | x_t) from the table: informative while x_t is visible, the prior once masked
for x_t in range(4):
    print(f"x_t={x_t}  p(x0|x_t, t=3) =", d3pm.softmax(den(np.array([x_t]), 3, None))[0].round(4))

samples, traj = d3pm.sample(den, None, s, (10_000, 1), seed=0, return_trajectory=True)
emp = np.bincount(samples[:, 0], minlength=3) / len(samples)
print("empirical:", emp.round(4), " target:", pi, " TV:", 0.5 * np.abs(emp - pi).sum().round(4))
masked = [float(np.mean(x == s.K)) for x in traj]
print("fraction masked along the chain (t=T..0, every 10 steps):", np.round(masked[::10], 3))
