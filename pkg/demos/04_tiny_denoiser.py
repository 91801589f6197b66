"""Train a 2-block ConMamba2 denoiser on a fixed low -> high token mapping.

Run:  python3 demos/04_tiny_denoiser.py   (about 10 s)
"""
import numpy as np

from vqbwe import d3pm
from vqbwe.nn import ConMamba2Config, ConMamba2Denoiser
from vqbwe.nn.optim import Adam
from vqbwe.nn.train import make_batch, train_step
from vqbwe.schedule import linear_schedule

K, M, T, F = 8, 2, 20, 16
s = linear_schedule(T, K, 0.9, 0.1, beta_is_total=True)
perm = np.random.default_rng(99).permutation(K)     # the "high band" is perm[low band]

cfg = ConMamba2Config(layers=2, feature_dim=16, state_dim=8, heads=2, cond_dim=16, chunk=8)
model = ConMamba2Denoiser(cfg, K, M, T, seed=0)
opt = Adam(model.named_parameters(), lr=3e-3)
print("parameters:", sum(p.data.size for p in model.named_parameters().values()))

rng = np.random.default_rng(0)
for step in range(200):
    y = rng.integers(0, K, (8, F, M))
    loss = train_step(make_batch(perm[y], y, s, rng), model, opt, s)
    if step % 40 == 0:
        print(f"step {step:3d}  loss/token {loss:.4f}")

y = np.random.default_rng(1).integers(0, K, (F, M))
x0 = d3pm.sample(model, model.condition(y), s, (F, M), seed=2)
print("sampled == target on", np.mean(x0 == perm[y]) * 100, "% of positions")
