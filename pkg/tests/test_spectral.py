import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from stochch.spectral import (
    Basis,
    apply_discrete_semigroup,
    apply_error_operator,
    apply_semigroup,
    build_basis,
    check_finite,
    eigenvalues,
    error_operator_factors,
    fractional_power,
    inner,
    sobolev_norm,
)

PI2 = math.pi**2


def unit(j, n):
    v = np.zeros(n)
    v[j - 1] = 1.0
    return v


coeffs = st.integers(1, 24).flatmap(
    lambda n: arrays(np.float64, n, elements=st.floats(-5, 5, allow_nan=False))
)


class TestBasis:
    def test_single_mode_eigenvalue(self):
        assert build_basis(1).lambdas[0] == pytest.approx(9.8696, abs=1e-4)

    def test_three_eigenvalues(self):
        np.testing.assert_allclose(eigenvalues(3), [PI2, 4 * PI2, 9 * PI2], rtol=1e-15)

    def test_grid_size_follows_factor(self):
        assert build_basis(8, dealias=2).n_grid == 16
        assert build_basis(8).n_grid == 20

    def test_zero_modes_rejected(self):
        with pytest.raises(ValueError):
            build_basis(0)

    def test_zero_field(self):
        b = Basis(5)
        assert np.all(b.to_physical(np.zeros(5)) == 0)

    def test_value_at_origin(self):
        # e_1(0) = sqrt(2); the grid has no node at 0 so evaluate directly
        b = Basis(1)
        x = b.grid
        np.testing.assert_allclose(b.to_physical(np.array([1.0])), math.sqrt(2) * np.cos(math.pi * x))
        assert math.sqrt(2) * math.cos(0.0) == pytest.approx(math.sqrt(2))

    def test_constant_is_annihilated(self):
        b = Basis(6)
        np.testing.assert_allclose(b.to_spectral(np.full(b.n_grid, 3.7)), 0, atol=1e-13)

    def test_sampled_mode_two(self):
        b = Basis(6)
        v = b.to_spectral(math.sqrt(2) * np.cos(2 * math.pi * b.grid))
        np.testing.assert_allclose(v, unit(2, 6), atol=1e-12)

    def test_cube_of_first_mode(self):
        b = Basis(4)
        v = b.to_spectral(b.to_physical(unit(1, 4)) ** 3)
        np.testing.assert_allclose(v, [1.5, 0, 0.5, 0], atol=1e-12)
        # independent check by adaptive quadrature
        for j, want in ((1, 1.5), (3, 0.5)):
            got, _ = integrate.quad(lambda x: (math.sqrt(2) * math.cos(math.pi * x)) ** 3
                                    * math.sqrt(2) * math.cos(j * math.pi * x), 0, 1, epsabs=1e-13)
            assert got == pytest.approx(want, abs=1e-11)

    def test_gram_is_identity(self):
        np.testing.assert_allclose(Basis(16).gram(), np.eye(16), atol=1e-13)

    def test_dimension_mismatch(self):
        b = Basis(4)
        with pytest.raises(ValueError):
            b.to_spectral(np.zeros(b.n_grid + 1))

    @settings(max_examples=50, deadline=None)
    @given(coeffs)
    def test_round_trip(self, v):
        b = Basis(v.size)
        np.testing.assert_allclose(b.to_spectral(b.to_physical(v)), v, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(coeffs)
    def test_parseval(self, v):
        b = Basis(v.size)
        assert b.l2_norm(b.to_physical(v)) == pytest.approx(np.linalg.norm(v), rel=1e-12, abs=1e-12)


class TestFractionalPowers:
    def test_alpha_zero_identity(self):
        v = np.arange(1.0, 6.0)
        np.testing.assert_array_equal(fractional_power(v, 0.0), v)

    def test_first_mode(self):
        assert fractional_power(unit(1, 3), 1.0)[0] == pytest.approx(PI2)

    @settings(max_examples=30, deadline=None)
    @given(coeffs, st.floats(-3, 3))
    def test_group_property(self, v, a):
        np.testing.assert_allclose(fractional_power(fractional_power(v, a), -a), v, rtol=1e-13, atol=1e-13)

    def test_norm_examples(self):
        assert sobolev_norm(unit(1, 3), 2.0) == pytest.approx(PI2)
        assert sobolev_norm(unit(2, 3), -1.0) == pytest.approx((4 * PI2) ** -0.5)
        v = np.array([3.0, 4.0])
        assert sobolev_norm(v, 0.0) == pytest.approx(5.0)

    def test_inner_consistent_with_norm(self):
        v = np.array([1.0, -2.0, 0.5])
        assert inner(v, v, 1.5) == pytest.approx(sobolev_norm(v, 1.5) ** 2)

    def test_non_finite_rejected(self):
        with pytest.raises(FloatingPointError):
            check_finite(np.array([1.0, np.nan]))


class TestSemigroups:
    def test_zero_time_identity(self):
        v = np.array([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(apply_semigroup(v, 0.0), v)

    def test_first_mode_decay(self):
        assert apply_semigroup(unit(1, 1), 0.01)[0] == pytest.approx(math.exp(-0.01 * math.pi**4), rel=1e-14)
        # exp(-0.974091...) to six places
        assert apply_semigroup(unit(1, 1), 0.01)[0] == pytest.approx(0.377535, abs=1e-6)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            apply_semigroup(np.ones(2), -1e-3)

    @settings(max_examples=30, deadline=None)
    @given(coeffs, st.floats(0, 0.05), st.floats(0, 0.05))
    def test_semigroup_property(self, v, s, t):
        lhs = apply_semigroup(apply_semigroup(v, s), t)
        assert np.linalg.norm(lhs - apply_semigroup(v, s + t)) <= 1e-13 * max(np.linalg.norm(v), 1.0)

    def test_single_resolvent_step(self):
        got = apply_discrete_semigroup(unit(1, 1), 0.01, 1)[0]
        assert got == pytest.approx(1 / (1 + 0.01 * math.pi**4))
        assert got == pytest.approx(0.50657, abs=1e-5)

    def test_powers_decrease_monotonically(self):
        v = np.ones(4)
        vals = [apply_discrete_semigroup(v, 1e-3, m) for m in range(1, 40)]
        assert all(np.all(b < a) for a, b in zip(vals, vals[1:]))

    def test_taylor_remainder(self):
        # |(1+x)^-1 - e^-x| <= x^2 / 2 for x in [0, 1]
        for tau in (1e-5, 1e-4, 1e-3):
            lam = eigenvalues(64)
            x = tau * lam**2
            x = x[x <= 1]
            diff = np.abs(1 / (1 + x) - np.exp(-x))
            assert np.all(diff <= 0.5 * x**2 + 1e-16)


class TestErrorOperator:
    def test_zero_field(self):
        assert np.all(apply_error_operator(np.zeros(5), 0.015, 0.01, 2) == 0)

    def test_inconsistent_time_rejected(self):
        with pytest.raises(ValueError):
            error_operator_factors(4, 0.5, 0.01, 2)

    def test_value(self):
        lam2 = math.pi**4
        got = error_operator_factors(1, 0.015, 0.01, 2)[0]
        assert got == pytest.approx(math.exp(-0.015 * lam2) - (1 + 0.01 * lam2) ** -2)

    def test_beta4_envelope(self):
        worst = 0.0
        for tau in (1e-4, 1e-3, 1e-2):
            lam = eigenvalues(128)
            for k in range(1, 40):
                for t in np.linspace((k - 1) * tau, k * tau, 6, endpoint=False):
                    worst = max(worst, np.max(np.abs(error_operator_factors(128, t, tau, k)) / (tau * lam**2)))
        assert worst <= 1.0
