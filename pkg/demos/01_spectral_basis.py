"""Spectral basis: transforms, fractional powers and the two semigroups.

Fields are plain coefficient arrays over the Neumann cosine modes
e_j = sqrt(2) cos(j pi x). This script walks through the basic operations.
"""

import numpy as np

from stochch.spectral import (
    Basis,
    apply_discrete_semigroup,
    apply_semigroup,
    eigenvalues,
    fractional_power,
    sobolev_norm,
)

basis = Basis(8)
print(f"8 modes use a collocation grid of {basis.n_grid} midpoints")
print("eigenvalues lambda_j = (j pi)^2:", np.round(eigenvalues(4), 4))

# the cube of e_1 lives in modes 1 and 3
e1 = np.eye(8)[0]
cube = basis.to_spectral(basis.to_physical(e1) ** 3)
print("e_1^3 projected:", np.round(cube, 12)[:4])

v = np.array([1.0, -0.5, 0.25, 0, 0, 0, 0, 0])
print("round trip error:", np.abs(basis.to_spectral(basis.to_physical(v)) - v).max())
print("|v|_2 =", sobolev_norm(v, 2.0), " A^1/2 A^-1/2 v == v:",
      np.allclose(fractional_power(fractional_power(v, 0.5), -0.5), v))

# exact heat-type decay against one backward Euler step of the same length
tau = 0.01
print("E(tau) e_1     :", apply_semigroup(e1, tau)[0])
print("(1+tau A^2)^-1 :", apply_discrete_semigroup(e1, tau, 1)[0])
