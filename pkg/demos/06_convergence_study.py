"""A scaled-down temporal convergence study with a fitted rate.

The full-size versions live in tests/test_acceptance.py; this one takes a
few seconds.
"""

from stochch import (
    ModelConfig,
    QSpectrum,
    TestFunctional,
    estimate_strong_error_temporal,
    estimate_weak_error_temporal,
    fit_rate,
)

cfg = ModelConfig(T=1.0, N=16, q=QSpectrum.power_law(2.0))
M_list, M_ref = [8, 16, 32], 512

strong = estimate_strong_error_temporal(cfg, M_list, M_ref, N=16, K=128, seed=1)
weak = estimate_weak_error_temporal(cfg, M_list, M_ref, N=16, K=128, phi=TestFunctional(), seed=1)

for rep in (strong, weak):
    fit = fit_rate(rep.h(cfg.T), rep.estimates, rep.std_errors)
    print(rep.study)
    print(rep.to_csv(), end="")
    print(f"fitted slope {fit.slope:.3f} (excluded: {fit.excluded_points})\n")
print("caveat:", strong.caveats[0])
