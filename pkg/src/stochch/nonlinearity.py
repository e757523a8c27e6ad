"""Cubic Nemytskii operator ``F(v) = v^3 - v`` evaluated by dealiased collocation.

Each evaluation transforms to the grid, applies the pointwise polynomial and
projects back. The projection drops the mean and every mode above ``N``, so
outputs always live in the Galerkin space.
"""

from __future__ import annotations

import numpy as np

from .spectral import Basis, fractional_power


def f(u):
    return u**3 - u


def f_prime(u):
    return 3.0 * u**2 - 1.0


def _basis_for(v: np.ndarray, basis: Basis | None) -> Basis:
    n = np.shape(v)[-1]
    if basis is None:
        return Basis(n)
    if basis.n_modes != n:
        raise ValueError(f"field has {n} modes, basis has {basis.n_modes}")
    return basis


def apply_F(v: np.ndarray, basis: Basis | None = None) -> np.ndarray:
    """Coefficients of ``P_N P (v^3 - v)``."""
    basis = _basis_for(v, basis)
    u = basis.to_physical(v)
    # the linear part projects back onto itself exactly
    return basis.to_spectral(u * u * u) - v


def apply_F_prime(v: np.ndarray, y: np.ndarray, basis: Basis | None = None) -> np.ndarray:
    """Coefficients of ``P_N P ((3 v^2 - 1) y)``."""
    basis = _basis_for(v, basis)
    u = basis.to_physical(v)
    return basis.to_spectral(3.0 * u * u * basis.to_physical(y)) - y


def jacobian_F(v: np.ndarray, basis: Basis | None = None) -> np.ndarray:
    """Dense Galerkin matrix of ``y -> P_N F'(v) y``; shape ``(..., N, N)``, symmetric."""
    basis = _basis_for(v, basis)
    u = basis.to_physical(v)
    S = basis._synthesis  # (N, G)
    weighted = S * (3.0 * u * u * basis.weights)[..., None, :]
    J = weighted @ S.T
    J -= np.eye(basis.n_modes)
    return J


def apply_drift(v: np.ndarray, basis: Basis | None = None) -> np.ndarray:
    """``A P_N F(v)``, the nonlinear drift of the Galerkin system."""
    return fractional_power(apply_F(v, basis), 1.0)
