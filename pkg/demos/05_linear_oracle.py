"""With the nonlinearity switched off the strong error is known in closed form.

The exact linear solution is sampled on the same noise as the scheme, so the
Monte Carlo estimate can be compared with the deterministic formula.
"""

from stochch import ModelConfig, QSpectrum, linear_oracle_study

cfg = ModelConfig(T=1.0, N=16, q=QSpectrum.power_law(2.0), linear=True)
rep = linear_oracle_study(cfg, M_list=[8, 32], N=16, K=1000, seed=7)
for M, est, se, orc, z in zip(rep.grid, rep.estimates, rep.std_errors, rep.extra["oracle"], rep.extra["z_scores"]):
    print(f"M={M:4d}  Monte Carlo {est:.5e} +/- {se:.1e}   formula {orc:.5e}   z={z:+.2f}")
