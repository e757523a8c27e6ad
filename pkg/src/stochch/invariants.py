"""Property suites for every module, runnable from the CLI and from pytest.

Each check returns a :class:`CheckResult`; ``run_all`` executes the registry
in order. Checks use fixed seeds so their outcome is reproducible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import spectral as sp
from .experiments import TestFunctional, dumps_json, estimate_weak_error_temporal
from .integrator import ModelConfig, SolverConfig, linear_recursion, simulate_path, solve_implicit, step_defect
from .noise import QSpectrum, build_noise_table, coarsen
from .nonlinearity import apply_F, apply_F_prime, f


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _random_fields(rng, n_fields, N, lo=-3.0, hi=3.0):
    return rng.uniform(lo, hi, size=(n_fields, N))


# -- spectral core ----------------------------------------------------------------


def check_parseval(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_rt = worst_norm = 0.0
    for N in (1, 7, 32, 128):
        b = sp.Basis(N)
        v = rng.standard_normal((20, N))
        phys = b.to_physical(v)
        worst_rt = max(worst_rt, float(np.abs(b.to_spectral(phys) - v).max()))
        worst_norm = max(worst_norm, float(np.abs(sp.sobolev_norm(v, 0) - b.l2_norm(phys)).max()))
        gram_err = float(np.abs(b.gram() - np.eye(N)).max())
        worst_rt = max(worst_rt, gram_err)
    ok = worst_rt <= 1e-10 and worst_norm <= 1e-10
    return CheckResult("parseval_roundtrip", ok,
                       f"max round-trip/Gram error {worst_rt:.2e}, norm mismatch {worst_norm:.2e} (tol 1e-10)")


def check_fractional_group(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((10, 64))
    worst = 0.0
    for a, b in [(0.5, -0.5), (1.0, 2.0), (-1.5, 0.25), (3.0, -1.0)]:
        lhs = sp.fractional_power(sp.fractional_power(v, a), b)
        rhs = sp.fractional_power(v, a + b)
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-300))))
    return CheckResult("fractional_power_group", worst <= 1e-12, f"max relative error {worst:.2e}")


def smoothing_constant(mu: float) -> float:
    """``sup_{s>0} s^(mu/4) exp(-s)``."""
    k = mu / 4.0
    return k**k * math.exp(-k)


def check_smoothing() -> CheckResult:
    j = np.arange(1, 257)[:, None]
    t = np.logspace(-12, 1, 400)[None, :]
    lam = (j * np.pi) ** 2
    worst = 0.0
    for mu in (1, 2, 3, 4):
        lhs = lam ** (mu / 2) * np.exp(-t * lam**2)
        ratio = lhs / (smoothing_constant(mu) * t ** (-mu / 4))
        worst = max(worst, float(ratio.max()))
    return CheckResult("semigroup_smoothing", worst <= 1 + 1e-12,
                       f"max of lambda^(mu/2) e^(-t lambda^2) / (C_mu t^(-mu/4)) = {worst:.12f} (<= 1)")


def _discrete_stability_sup(mu, n_j, n_m, n_tau):
    lam = (np.arange(1, n_j + 1) * np.pi) ** 2
    m = np.arange(1, n_m + 1)
    best = 0.0
    for tau in np.logspace(-8, 0, n_tau):
        x = tau * lam[:, None]
        val = (m[None, :] * x) ** (mu / 2) * (1 + x) ** (-m[None, :].astype(float))
        best = max(best, float(val.max()))
    return best


def check_discrete_stability() -> CheckResult:
    parts, ok = [], True
    for mu in (0, 1, 2):
        c1 = _discrete_stability_sup(mu, 32, 64, 200)
        c2 = _discrete_stability_sup(mu, 64, 128, 400)
        drift = abs(c2 - c1) / c1
        ok &= drift <= 0.05
        parts.append(f"mu={mu}: C={c1:.4f}->{c2:.4f} ({100 * drift:.2f}%)")
    return CheckResult("discrete_semigroup_stability", ok, "; ".join(parts) + " (drift <= 5%)")


def check_square_sum() -> CheckResult:
    worst = 0.0
    lam = (np.arange(1, 65) * np.pi) ** 2
    for tau in np.logspace(-8, 0, 60):
        for mlen in (1, 2, 10, 100, 1000):
            i = np.arange(1, mlen + 1)[None, :]
            s = tau * np.sum(lam[:, None] ** 2 * (1 + tau * lam[:, None] ** 2) ** (-2.0 * i), axis=1)
            worst = max(worst, float(s.max()))
    return CheckResult("discrete_square_sum", worst <= 0.5 * (1 + 1e-12),
                       f"max tau sum lambda^2 (1+tau lambda^2)^(-2i) = {worst:.6f} (<= 1/2)")


def check_error_operator() -> CheckResult:
    lam = (np.arange(1, 129) * np.pi) ** 2
    c_beta4 = c_rho0 = 0.0
    for tau in np.logspace(-8, -1, 40):
        for k in (1, 2, 3, 5, 10, 50):
            for frac in np.linspace(0, 0.999, 21):
                t = (k - 1 + frac) * tau
                fac = np.abs(sp.error_operator_factors(lam.size, t, tau, k))
                c_beta4 = max(c_beta4, float(np.max(fac / (tau * lam**2))))
                c_rho0 = max(c_rho0, float(fac.max()))
    ok = c_beta4 <= 1 and c_rho0 <= 2
    return CheckResult("error_operator_bounds", ok,
                       f"empirical C (beta=4) = {c_beta4:.6f} (<= 1), C (rho=0) = {c_rho0:.6f} (<= 2)")


# -- nonlinearity -----------------------------------------------------------------


def check_one_sided(seed=1, pairs=1000, N=16) -> CheckResult:
    rng = np.random.default_rng(seed)
    b = sp.Basis(N)
    u, v = _random_fields(rng, pairs, N), _random_fields(rng, pairs, N)
    # small fields sit close to equality, where the linear part -v dominates
    amp = np.where(np.arange(pairs) % 2, 1.0, 1e-3)[:, None]
    u, v = u * amp, v * amp
    d = u - v
    lhs = -sp.inner(apply_F(u, b) - apply_F(v, b), d)
    rhs = sp.inner(d, d)
    excess = float(np.max((lhs - rhs) / rhs))
    return CheckResult("one_sided_condition", excess <= 1e-12,
                       f"{pairs} pairs, max (lhs - |u-v|^2)/|u-v|^2 = {excess:.3e}")


def check_local_lipschitz(seed=2, pairs=1000, N=16, C=3.0) -> CheckResult:
    rng = np.random.default_rng(seed)
    b = sp.Basis(N)
    u, v = _random_fields(rng, pairs, N), _random_fields(rng, pairs, N)
    lhs = sp.sobolev_norm(apply_F(u, b) - apply_F(v, b), 0)
    supu = np.abs(b.to_physical(u)).max(axis=1)
    supv = np.abs(b.to_physical(v)).max(axis=1)
    rhs = C * (1 + supu**2 + supv**2) * sp.sobolev_norm(u - v, 0)
    worst = float(np.max(lhs / rhs))
    return CheckResult("local_lipschitz", worst <= 1, f"{pairs} pairs, max ratio to bound with C=3: {worst:.4f}")


def check_dealiasing(seed=3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for N in (1, 2, 5, 16, 32):
        v = rng.uniform(-1, 1, size=(20, N)) / np.arange(1, N + 1)
        fine = sp.Basis(N, 4 * sp.DEFAULT_DEALIAS)
        oracle = fine.to_spectral(f(fine.to_physical(v)), N)
        got = apply_F(v, sp.Basis(N))
        worst = max(worst, float(np.abs(got - oracle).max() / max(1.0, np.abs(oracle).max())))
    return CheckResult("dealiasing_exactness", worst <= 1e-10, f"max deviation from 4x oversampled quadrature {worst:.2e}")


def fd_slope_F_prime(seed=4, N=16) -> float:
    rng = np.random.default_rng(seed)
    b = sp.Basis(N)
    v = rng.uniform(-1, 1, N) / np.arange(1, N + 1)
    y = rng.uniform(-1, 1, N) / np.arange(1, N + 1)
    exact = apply_F_prime(v, y, b)
    hs = np.array([1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5])
    errs = [float(sp.sobolev_norm((apply_F(v + h * y, b) - apply_F(v, b)) / h - exact, 0)) for h in hs]
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def check_F_prime() -> CheckResult:
    slope = fd_slope_F_prime()
    rng = np.random.default_rng(5)
    b = sp.Basis(16)
    v, y, z = (rng.uniform(-2, 2, (50, 16)) for _ in range(3))
    asym = float(np.abs(sp.inner(apply_F_prime(v, y, b), z) - sp.inner(apply_F_prime(v, z, b), y)).max())
    ok = slope >= 0.9 and asym <= 1e-11
    return CheckResult("F_prime_consistency", ok,
                       f"finite-difference slope {slope:.3f} (>= 0.9), symmetry defect {asym:.2e}")


# -- integrator -------------------------------------------------------------------


def check_defect_census(steps=10_000, seed=6) -> CheckResult:
    """Re-verify every accepted step with an independently evaluated residual."""
    cfg = SolverConfig()
    N, tau, P = 16, 1e-3, 100
    b, b_check = sp.Basis(N), sp.Basis(N, 4 * sp.DEFAULT_DEALIAS)
    q = QSpectrum.power_law(2.0).variances(N)
    rng = np.random.default_rng(seed)
    X = np.zeros((P, N))
    X[:, 0] = 1.0
    worst, count = 0.0, 0
    while count < steps:
        dW = rng.standard_normal((P, N)) * np.sqrt(q * tau) * 10
        Xn, _ = solve_implicit(X + dW, tau, b, cfg)
        worst = max(worst, float(step_defect(Xn, X, dW, tau, b_check).max()))
        X = Xn
        count += P
    return CheckResult("solver_defect_census", worst <= 2 * cfg.tol,
                       f"{count} steps, max re-evaluated residual {worst:.2e} (<= {2 * cfg.tol:.0e})")


def check_linear_equivalence(seed=7) -> CheckResult:
    cfg = ModelConfig(N=24, M=64, linear=True, x0=((1, 1.0), (3, -0.5)))
    table = build_noise_table(seed, cfg.T, cfg.M, cfg.N, cfg.q)
    inc = coarsen(table, cfg.M)
    got = simulate_path(cfg, inc).final
    ref = linear_recursion(cfg, inc)
    rel = float(np.abs(got - ref).max() / np.abs(ref).max())
    return CheckResult("linear_mode_equivalence", rel <= 1e-12, f"max relative deviation {rel:.2e}")


# -- noise ------------------------------------------------------------------------


def check_noise_nesting(seed=8) -> CheckResult:
    ok = True
    for N in (4, 16):
        t1 = build_noise_table(seed, 1.0, 256, N, QSpectrum())
        t2 = build_noise_table(seed, 1.0, 256, 2 * N, QSpectrum())
        for M in (256, 64, 8):
            a, c = coarsen(t1, M, N).values, coarsen(t2, M, N).values
            ok &= np.array_equal(a, c) and a.size == M * N and np.all(np.isfinite(a))
        ok &= np.array_equal(coarsen(coarsen(t2, 16), 8).values, coarsen(t2, 8).values)
    return CheckResult("noise_nesting", bool(ok), "modes 1..N bit-identical for N_ref in {N, 2N}; coarsening telescopes")


def check_admissibility_monotone() -> CheckResult:
    rs = np.linspace(0.5, 4, 71)
    flags = [QSpectrum.power_law(r).admissibility()[0] for r in rs]
    mono = all(not a or b for a, b in zip(flags, flags[1:]))
    return CheckResult("admissibility_monotone", mono and not flags[0] and flags[-1],
                       "admissible set in r is an upper interval starting above 3/2")


# -- experiments ------------------------------------------------------------------


def check_worker_determinism(seed=9) -> CheckResult:
    cfg = ModelConfig(N=8)
    blobs = []
    for w in (1, 4, 8):
        rep = estimate_weak_error_temporal(cfg, [4, 8, 16], 64, 8, 40, TestFunctional(), seed,
                                           workers=w, chunk=8)
        blobs.append(dumps_json(rep.to_dict()))
    same = all(b == blobs[0] for b in blobs)
    return CheckResult("worker_determinism", same, "reports byte-identical across 1, 4, 8 workers")


REGISTRY = [
    check_parseval,
    check_fractional_group,
    check_smoothing,
    check_discrete_stability,
    check_square_sum,
    check_error_operator,
    check_one_sided,
    check_local_lipschitz,
    check_dealiasing,
    check_F_prime,
    check_defect_census,
    check_linear_equivalence,
    check_noise_nesting,
    check_admissibility_monotone,
    check_worker_determinism,
]


def run_all(registry=None) -> list[CheckResult]:
    out = []
    for fn in registry or REGISTRY:
        t0 = time.perf_counter()
        try:
            res = fn()
        except Exception as exc:  # a crashing check is a failing check
            res = CheckResult(fn.__name__.removeprefix("check_"), False, f"raised {exc!r}")
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out
