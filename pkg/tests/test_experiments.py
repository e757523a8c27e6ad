import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochch.experiments import (
    NoSignal,
    TestFunctional,
    dumps_json,
    estimate_strong_error_spatial,
    estimate_strong_error_temporal,
    estimate_weak_error_spatial,
    estimate_weak_error_temporal,
    evaluate_functional,
    fit_rate,
    linear_oracle_study,
    linear_strong_error_sq,
    mean_and_se,
    pairwise_sum,
    spatial_subdominance,
)
from stochch.integrator import ModelConfig
from stochch.noise import QSpectrum

CFG = ModelConfig(T=1.0, N=8, q=QSpectrum.power_law(2.0))
PHI = TestFunctional("gauss_exp", sigma=1.0)


class TestFit:
    def test_exact_power(self):
        h = np.array([0.1, 0.05, 0.025, 0.0125])
        assert fit_rate(h, h**2).slope == pytest.approx(2.0, abs=1e-12)

    def test_single_survivor(self):
        with pytest.raises(NoSignal):
            fit_rate([0.1, 0.05, 0.025], [1.0, 1e-9, 1e-9], [1e-3, 1e-3, 1e-3])

    def test_noisy_linear(self):
        rng = np.random.default_rng(0)
        tau = 1.0 / np.array([16, 32, 64, 128, 256])
        e = 3 * tau * (1 + 0.01 * rng.normal(size=tau.size))
        fit = fit_rate(tau, e)
        assert 0.95 <= fit.slope <= 1.05 and math.isfinite(fit.ci95)

    def test_excluded_points_listed(self):
        fit = fit_rate([0.1, 0.05, 0.025], [1.0, 0.25, 1e-9], [1e-3, 1e-3, 1e-3])
        assert fit.excluded_points == [0.025] and fit.n_points == 2 and math.isinf(fit.ci95)

    def test_json_fields(self):
        d = json.loads(dumps_json(fit_rate([0.1, 0.05, 0.01], [1.0, 0.3, 0.02]).to_dict()))
        assert {"slope", "ci95", "excluded_points"} <= set(d)


class TestReductions:
    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200))
    def test_pairwise_sum(self, xs):
        a = np.array(xs)
        assert pairwise_sum(a) == pytest.approx(math.fsum(xs), rel=1e-9, abs=1e-6)

    def test_mean_and_se(self):
        x = np.arange(10.0)[:, None]
        m, se = mean_and_se(x)
        assert m[0] == 4.5 and se[0] == pytest.approx(np.std(x, ddof=1) / math.sqrt(10))


class TestFunctionals:
    def test_gauss_at_zero(self):
        assert evaluate_functional(PHI, np.zeros(5)) == 1.0

    def test_cosine_orthogonal(self):
        phi = TestFunctional("cosine_pairing", psi=(0.0, 1.0))
        assert evaluate_functional(phi, np.array([3.0, 0.0, 2.0])) == 1.0

    @pytest.mark.parametrize("phi", [PHI, TestFunctional("cosine_pairing", psi=(0.5, -1.0, 0.2))])
    def test_gradient_by_finite_differences(self, phi):
        rng = np.random.default_rng(3)
        x, d = rng.normal(size=4) * 0.5, rng.normal(size=4)
        hs = np.array([1e-2, 1e-3, 1e-4])
        errs = [abs((phi(x + h * d) - phi(x)) / h - phi.gradient(x) @ d) for h in hs]
        assert np.polyfit(np.log(hs), np.log(errs), 1)[0] >= 0.9

    def test_derivative_bound(self):
        # the sup of |grad| over a ray attains the recorded bound
        r = np.linspace(0, 3, 30001)
        grads = [np.linalg.norm(PHI.gradient(np.array([t, 0.0]))) for t in r]
        assert max(grads) == pytest.approx(PHI.d1_bound, rel=1e-6)

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            TestFunctional("quadratic")


class TestEstimators:
    def test_temporal_self_difference_is_zero(self):
        rep = estimate_weak_error_temporal(CFG, [64], 64, 8, 16, PHI, 1)
        assert rep.estimates == [0.0] and rep.std_errors == [0.0]
        rep = estimate_strong_error_temporal(CFG, [64], 64, 8, 16, 1)
        assert rep.estimates == [0.0]

    def test_spatial_self_difference_is_zero(self):
        assert estimate_strong_error_spatial(CFG, [16], 16, 32, 16, 1).estimates == [0.0]
        assert estimate_weak_error_spatial(CFG, [16], 16, 32, 16, PHI, 1).estimates == [0.0]

    def test_divisibility(self):
        with pytest.raises(ValueError):
            estimate_strong_error_temporal(CFG, [24], 2048, 8, 4, 0)

    def test_doubling_K_shrinks_se(self):
        ratios = []
        for seed in range(4):
            a = estimate_strong_error_temporal(CFG, [4], 64, 8, 64, seed, chunk=16).std_errors[0]
            b = estimate_strong_error_temporal(CFG, [4], 64, 8, 128, seed + 100, chunk=16).std_errors[0]
            ratios.append(b / a)
        assert 0.6 <= float(np.median(ratios)) <= 0.85

    def test_spatial_monotone(self):
        rep = estimate_strong_error_spatial(CFG, [2, 4, 8], 32, 64, 64, 2, chunk=32)
        e, s = np.array(rep.estimates), np.array(rep.std_errors)
        assert np.all(e[1:] <= e[:-1] + 2 * (s[1:] + s[:-1]))

    def test_weak_below_strong_times_lipschitz(self):
        weak, strong = estimate_weak_error_spatial(CFG, [2, 4], 32, 64, 64, PHI, 3, with_strong=True)
        for w, sw, s in zip(weak.estimates, weak.std_errors, strong.estimates):
            assert abs(w) <= s * PHI.d1_bound + 2 * sw

    def test_worker_count_invariance(self):
        runs = [estimate_weak_error_temporal(CFG, [4, 8], 32, 8, 40, PHI, 5, workers=w, chunk=8)
                for w in (1, 3)]
        assert dumps_json(runs[0].to_dict()) == dumps_json(runs[1].to_dict())

    def test_caveat_present(self):
        rep = estimate_strong_error_temporal(CFG, [8], 32, 8, 8, 0)
        assert any("self-convergence" in c for c in rep.caveats)

    def test_subdominance_message(self):
        ok, msg = spatial_subdominance(1.0, 2048, [4, 8, 16, 32])
        assert not ok and "NOT subdominant" in msg

    def test_csv(self):
        rep = estimate_strong_error_temporal(CFG, [8, 16], 32, 8, 8, 0)
        lines = rep.to_csv().splitlines()
        assert lines[0] == "level,estimate,std_error,K" and len(lines) == 3


class TestLinearOracle:
    def test_quadrature_formula(self):
        from scipy import integrate

        from stochch.spectral import eigenvalues

        q, T, M, N = QSpectrum.power_law(2.0), 1.0, 8, 3
        lam2 = eigenvalues(N) ** 2
        tau = T / M
        total = 0.0
        for j in range(N):
            for k in range(M):
                f = lambda s: (math.exp(-lam2[j] * (T - s)) - (1 + tau * lam2[j]) ** -(M - k)) ** 2
                total += q.variances(N)[j] * integrate.quad(f, k * tau, (k + 1) * tau, epsabs=1e-15)[0]
        assert linear_strong_error_sq(q, T, M, N) == pytest.approx(total, rel=1e-9)

    def test_study_agrees(self):
        rep = linear_oracle_study(CFG.with_(linear=True), [8, 32], 8, 512, 4)
        assert all(abs(z) <= 3 for z in rep.extra["z_scores"])
