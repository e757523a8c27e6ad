"""The cubic nonlinearity F(v) = v^3 - v and its derivative, evaluated spectrally."""

import numpy as np

from stochch.nonlinearity import apply_drift, apply_F, apply_F_prime

a = 0.7
v = np.zeros(5)
v[0] = a
print("F(a e_1)         :", np.round(apply_F(v), 12))
print("closed form      :", [1.5 * a**3 - a, 0, 0.5 * a**3, 0, 0])
print("drift A F(a e_1) :", np.round(apply_drift(v), 8))

# directional derivative by finite differences versus the exact one
rng = np.random.default_rng(0)
v, y = rng.normal(size=10), rng.normal(size=10)
exact = apply_F_prime(v, y)
for h in (1e-2, 1e-3, 1e-4):
    fd = (apply_F(v + h * y) - apply_F(v)) / h
    print(f"h={h:g}: |FD - F'(v)y| = {np.linalg.norm(fd - exact):.2e}")
