"""Homogenized constants of the three time-scaling regimes.

The slow, diffusive and fast constants are computed for the separable
model exp(-x^2) exp(-|t|).  Concentrating the spatial profile drives the
diffusive constant towards the slow one; flattening it drives it towards
the fast one.
"""

import math

from homoglab import fields, homog

model = fields.separable_model("gaussian", "exponential")

# %% one constant per regime
print("slow       ", homog.vbar_slow(model), "(closed form sqrt(pi)/2 =", math.sqrt(math.pi) / 2, ")")
print("diffusive  ", homog.vbar_diffusive(model))
print("fast       ", homog.vbar_fast(model))

# %% the diffusive constant interpolates between the other two
slow, fast = homog.vbar_slow(model), homog.vbar_fast(model)
print("\n delta   concentrated gap   flattened gap")
for d in (1.0, 0.5, 0.25, 0.125):
    c = homog.vbar_diffusive(fields.concentrate(model, d))
    f = homog.vbar_diffusive(fields.flatten(model, d))
    print(f"{d:6.3f}   {abs(c - slow) / slow:16.2%}   {abs(f - fast) / fast:13.2%}")

# %% the regime is picked from the time-scaling exponent alpha
for alpha in (1.0, 2.0, 3.0):
    reg = homog.ScalingRegime(alpha)
    print(f"alpha={alpha:g}: {reg.tag:9s} beta={reg.beta:g}  Vbar={homog.vbar(model, alpha):.6f}")
