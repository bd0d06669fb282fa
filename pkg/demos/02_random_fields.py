"""Sampling the random potential.

A Gaussian field is drawn by circulant embedding and its empirical
covariance is compared with the model; a Poisson shot-noise field is drawn
from its point cloud.  The Wick factorisation of fourth moments is checked
at one quadruple of points.
"""

import numpy as np

from homoglab import fields

model = fields.separable_model("gaussian", "exponential")
grid = fields.Grid.from_domain(8.0, 4.0, 0.125, 0.125, periodic_x=True)

# %% independent realizations from consecutive seeds
reals = [fields.sample_gaussian_field(model, grid, seed) for seed in range(200)]
print("field shape (t, x):", reals[0].values.shape)
pooled = np.stack([r.values for r in reals])
print("pooled mean     ", pooled.mean(), "(model 0)")
print("pooled variance ", pooled.var(), "(model 1)")

# %% empirical covariance at a few space-time lags
lags = [(0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (1.0, 1.0)]
for est in fields.empirical_covariance(reals, lags):
    exact = fields.phi_eval(model, est.dx, est.dt)
    print(f"lag ({est.dx:g}, {est.dt:g}): estimate {est.estimate:+.4f} +- {est.stderr:.4f}   model {exact:+.4f}")

# %% shot noise: two bump families, one with negative amplitude
spec = fields.ShotNoiseSpec((fields.BumpMark(2.0, 1.0, 0.5, 0.5), fields.BumpMark(2.0, -0.25, 1.0, 1.0)))
shot = fields.sample_shot_noise_field(spec, fields.Grid.from_domain(8.0, 4.0, 0.125, 0.125), seed=3)
print("\nshot-noise sample mean", shot.values.mean(), "variance", shot.values.var())

# %% Gaussian fourth moments factorise into covariance products
pts = [(0.0, 0.0), (0.25, 0.25), (0.5, 0.0), (0.0, 0.75)]
res = fields.four_point_check(model, pts, n_samples=50_000, seed=1)
print(f"\nfour-point: empirical {res.empirical:.4f} +- {res.stderr:.4f}, Wick {res.wick:.4f}")
