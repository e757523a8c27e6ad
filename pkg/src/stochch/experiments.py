"""Monte Carlo weak/strong error estimation and convergence-rate fits.

The exact solution is unavailable, so every error is a self-convergence
difference against a fine reference driven by the same noise table (common
random numbers). Paths are processed in fixed chunks; each chunk is an
independent unit of work whose result depends only on its path indices, and
per-path statistics are reduced with a fixed pairwise tree. Reports are
therefore identical for any worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .integrator import ModelConfig, simulate_linear_exact, simulate_path
from .noise import build_noise_batch, coarsen, derive_seed
from .spectral import Basis, eigenvalues

WORKERS_ENV = "STOCHCH_WORKERS"
DEFAULT_CHUNK = 64


class NoSignal(ValueError):
    """Too few points carry signal above the Monte Carlo noise to fit a rate."""


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# -- test functionals -----------------------------------------------------------


@dataclass(frozen=True)
class TestFunctional:
    """A twice differentiable functional with bounded derivatives.

    ``gauss_exp``: ``exp(-|x|_0^2 / sigma^2)``.
    ``cosine_pairing``: ``cos(<x, psi>)`` with ``psi`` given as mode coefficients.
    """

    __test__ = False  # not a pytest class

    kind: str = "gauss_exp"
    sigma: float = 1.0
    psi: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "gauss_exp":
            if not self.sigma > 0:
                raise ValueError("sigma must be > 0")
        elif self.kind == "cosine_pairing":
            if not self.psi:
                raise ValueError("cosine_pairing needs a direction psi")
        else:
            raise ValueError(f"unknown functional kind {self.kind!r}")

    def _psi(self, n: int) -> np.ndarray:
        p = np.zeros(n)
        k = min(n, len(self.psi))
        p[:k] = self.psi[:k]
        return p

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "gauss_exp":
            return np.exp(-np.sum(x * x, axis=-1) / self.sigma**2)
        return np.cos(x @ self._psi(x.shape[-1]))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "gauss_exp":
            return (-2.0 / self.sigma**2) * self(x)[..., None] * x
        p = self._psi(x.shape[-1])
        return -np.sin(x @ p)[..., None] * p

    @property
    def d1_bound(self) -> float:
        if self.kind == "gauss_exp":
            return math.sqrt(2.0) / (self.sigma * math.exp(0.5))
        return float(np.linalg.norm(self.psi))

    @property
    def d2_bound(self) -> float:
        if self.kind == "gauss_exp":
            return 2.0 / self.sigma**2
        return float(np.dot(self.psi, self.psi))

    def to_dict(self) -> dict:
        if self.kind == "gauss_exp":
            return {"kind": self.kind, "sigma": self.sigma}
        return {"kind": self.kind, "psi": list(self.psi)}


def evaluate_functional(phi: TestFunctional, x: np.ndarray) -> np.ndarray:
    return phi(x)


# -- reports --------------------------------------------------------------------


@dataclass
class ErrorReport:
    study: str
    level_name: str  # "M" or "N"
    grid: list
    estimates: list
    std_errors: list
    K: int
    coupling: dict
    caveats: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def h(self, T: float = 1.0) -> np.ndarray:
        """Mesh parameter per level: ``tau = T/M`` in time, ``1/N`` in space."""
        g = np.asarray(self.grid, dtype=float)
        return T / g if self.level_name == "M" else 1.0 / g

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "estimate", "std_error", "K"])
        for lvl, est, se in zip(self.grid, self.estimates, self.std_errors):
            w.writerow([lvl, repr(float(est)), repr(float(se)), self.K])
        return buf.getvalue()


@dataclass
class RateFit:
    slope: float
    intercept: float
    ci95: float
    residual: float
    n_points: int
    excluded_points: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def contains(self, lo: float, hi: float) -> bool:
        return lo <= self.slope <= hi


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


# -- rate fitting ---------------------------------------------------------------


def fit_rate(h, errors, std_errors=None, weights=None) -> RateFit:
    """Least-squares fit of ``log|error| = slope log h + intercept``.

    Points whose ``|error|`` lies within two standard errors of zero (or is
    zero) are dropped and listed in ``excluded_points``. The confidence
    half-width is the 97.5% Student-t quantile times the slope's standard
    error; it is infinite with only two points.
    """
    h = np.asarray(h, dtype=float)
    e = np.abs(np.asarray(errors, dtype=float))
    if h.size != e.size:
        raise ValueError("h and errors differ in length")
    if np.any(h <= 0):
        raise ValueError("mesh parameters must be positive")
    se = np.zeros_like(e) if std_errors is None else np.asarray(std_errors, dtype=float)
    keep = (e > 0) & (e > 2.0 * se)
    excluded = [float(x) for x in h[~keep]]
    if keep.sum() < 2:
        raise NoSignal(f"only {int(keep.sum())} point(s) above the 2-standard-error floor")
    x, y = np.log(h[keep]), np.log(e[keep])
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)[keep]
    sw = np.sqrt(w)
    Xd = np.column_stack([x, np.ones_like(x)]) * sw[:, None]
    coef, *_ = np.linalg.lstsq(Xd, y * sw, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = (y - (slope * x + intercept)) * sw
    rss = float(resid @ resid)
    n = x.size
    if n > 2:
        sigma2 = rss / (n - 2)
        cov = sigma2 * np.linalg.inv(Xd.T @ Xd)
        half = float(stats.t.ppf(0.975, n - 2) * math.sqrt(cov[0, 0]))
    else:
        half = math.inf
    return RateFit(slope, intercept, half, math.sqrt(rss), n, excluded)


# -- deterministic reductions ---------------------------------------------------


def pairwise_sum(a: np.ndarray) -> np.ndarray:
    """Sum along axis 0 with a fixed binary tree."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[0] == 0:
        return np.zeros(a.shape[1:])
    while a.shape[0] > 1:
        if a.shape[0] % 2:
            a = np.concatenate([a[:-2], (a[-2] + a[-1])[None]])
        else:
            a = a[0::2] + a[1::2]
    return a[0]


def mean_and_se(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and its standard error along axis 0 (fixed summation order)."""
    K = samples.shape[0]
    mean = pairwise_sum(samples) / K
    if K < 2:
        return mean, np.zeros_like(mean)
    var = pairwise_sum((samples - mean) ** 2) / (K - 1)
    return mean, np.sqrt(var / K)


def strong_from_squares(sq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Root-mean-square error with a delta-method standard error."""
    m, se_m = mean_and_se(sq)
    est = np.sqrt(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.where(m > 0, se_m / (2.0 * est), 0.0)
    return est, se


# -- chunked, order-independent execution ---------------------------------------


def _chunks(K: int, chunk: int):
    return [np.arange(s, min(s + chunk, K)) for s in range(0, K, chunk)]


def _map_chunks(fn, K: int, chunk: int, workers: int | None):
    parts = _chunks(K, chunk)
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(parts) == 1:
        results = [fn(p) for p in parts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, parts))  # slot order = chunk order
    return {k: np.concatenate([r[k] for r in results]) for k in results[0]}


def path_seeds(seed: int, study: str, paths) -> list[int]:
    return [derive_seed(seed, study, "path", int(p)) for p in paths]


def _pad(x: np.ndarray, n: int) -> np.ndarray:
    if x.shape[-1] == n:
        return x
    out = np.zeros(x.shape[:-1] + (n,))
    out[..., : x.shape[-1]] = x
    return out


def coupled_temporal(cfg: ModelConfig, M_list, M_ref: int, N: int, K: int, seed: int,
                     phi: TestFunctional | None = None, *, study="temporal",
                     workers=None, chunk=DEFAULT_CHUNK) -> dict:
    """Per-path squared differences (and functional differences) against the ``M_ref`` path."""
    M_list = [int(m) for m in M_list]
    for M in M_list:
        if M < 1 or M_ref % M:
            raise ValueError(f"M={M} does not divide M_ref={M_ref}")
    basis = Basis(N)

    def run(paths):
        table = build_noise_batch(path_seeds(seed, study, paths), cfg.T, M_ref, N, cfg.q)
        ref = simulate_path(cfg.with_(N=N, M=M_ref), coarsen(table, M_ref, N), basis,
                            diagnostics=False).final
        sq = np.empty((paths.size, len(M_list)))
        wk = np.empty((paths.size, len(M_list)))
        for i, M in enumerate(M_list):
            if M == M_ref:
                X = ref
            else:
                X = simulate_path(cfg.with_(N=N, M=M), coarsen(table, M, N), basis,
                                  diagnostics=False).final
            sq[:, i] = np.sum((ref - X) ** 2, axis=-1)
            wk[:, i] = phi(ref) - phi(X) if phi is not None else 0.0
        return {"sq": sq, "weak": wk}

    return _map_chunks(run, K, chunk, workers)


def coupled_spatial(cfg: ModelConfig, N_list, N_ref: int, M: int, K: int, seed: int,
                    phi: TestFunctional | None = None, *, study="spatial",
                    workers=None, chunk=DEFAULT_CHUNK) -> dict:
    """Per-path differences of the ``N``-mode solutions against the ``N_ref`` solution."""
    N_list = [int(n) for n in N_list]
    for N in N_list:
        if not 1 <= N <= N_ref:
            raise ValueError(f"N={N} must be in [1, N_ref={N_ref}]")
    bases = {n: Basis(n) for n in set(N_list) | {N_ref}}

    def run(paths):
        table = build_noise_batch(path_seeds(seed, study, paths), cfg.T, M, N_ref, cfg.q)
        ref = simulate_path(cfg.with_(N=N_ref, M=M), coarsen(table, M, N_ref), bases[N_ref],
                            diagnostics=False).final
        sq = np.empty((paths.size, len(N_list)))
        wk = np.empty((paths.size, len(N_list)))
        for i, N in enumerate(N_list):
            if N == N_ref:
                X = ref
            else:
                X = _pad(simulate_path(cfg.with_(N=N, M=M), coarsen(table, M, N), bases[N],
                                       diagnostics=False).final, N_ref)
            sq[:, i] = np.sum((ref - X) ** 2, axis=-1)
            wk[:, i] = phi(ref) - phi(X) if phi is not None else 0.0
        return {"sq": sq, "weak": wk}

    return _map_chunks(run, K, chunk, workers)


def _coupling(kind, ref, seed, chunk, **extra):
    return {"reference": kind, "reference_level": ref, "seed": seed, "chunk": chunk, **extra}


_SELF_CONVERGENCE = ("errors are self-convergence differences against the reference level; "
                     "bounds against the exact solution differ by the reference's own error")


def estimate_weak_error_temporal(cfg, M_list, M_ref, N, K, phi, seed, *, workers=None,
                                 chunk=DEFAULT_CHUNK) -> ErrorReport:
    raw = coupled_temporal(cfg, M_list, M_ref, N, K, seed, phi, study="temporal_weak",
                           workers=workers, chunk=chunk)
    est, se = mean_and_se(raw["weak"])
    return ErrorReport("temporal_weak", "M", list(M_list), est.tolist(), se.tolist(), K,
                       _coupling("M_ref", M_ref, seed, chunk, N=N), [_SELF_CONVERGENCE])


def estimate_strong_error_temporal(cfg, M_list, M_ref, N, K, seed, *, workers=None,
                                   chunk=DEFAULT_CHUNK) -> ErrorReport:
    raw = coupled_temporal(cfg, M_list, M_ref, N, K, seed, None, study="temporal_strong",
                           workers=workers, chunk=chunk)
    est, se = strong_from_squares(raw["sq"])
    return ErrorReport("temporal_strong", "M", list(M_list), est.tolist(), se.tolist(), K,
                       _coupling("M_ref", M_ref, seed, chunk, N=N), [_SELF_CONVERGENCE])


def spatial_subdominance(T: float, M: int, N_list) -> tuple[bool, str]:
    """Whether ``tau^(3/4) <= lambda_Nmax^(-3/2) / 4``."""
    tau = T / M
    lam = eigenvalues(max(N_list))[-1]
    lhs, rhs = tau**0.75, 0.25 * lam**-1.5
    ok = lhs <= rhs
    msg = (f"temporal term tau^(3/4)={lhs:.3g} vs lambda_N^(-3/2)/4={rhs:.3g}: "
           + ("subdominant" if ok else "NOT subdominant; the shared time grid cancels "
              "most of the temporal error in the coupled difference"))
    return ok, msg


def _spatial_report(study, raw_key, cfg, N_list, N_ref, M, K, seed, chunk, raw):
    if raw_key == "weak":
        est, se = mean_and_se(raw["weak"])
    else:
        est, se = strong_from_squares(raw["sq"])
    caveats = [_SELF_CONVERGENCE]
    ok, msg = spatial_subdominance(cfg.T, M, N_list)
    if not ok:
        caveats.append(msg)
    return ErrorReport(study, "N", list(N_list), est.tolist(), se.tolist(), K,
                       _coupling("N_ref", N_ref, seed, chunk, M=M), caveats)


def estimate_strong_error_spatial(cfg, N_list, N_ref, M, K, seed, *, workers=None,
                                  chunk=DEFAULT_CHUNK) -> ErrorReport:
    raw = coupled_spatial(cfg, N_list, N_ref, M, K, seed, None, study="spatial_strong",
                          workers=workers, chunk=chunk)
    return _spatial_report("spatial_strong", "sq", cfg, N_list, N_ref, M, K, seed, chunk, raw)


def estimate_weak_error_spatial(cfg, N_list, N_ref, M, K, phi, seed, *, workers=None,
                                chunk=DEFAULT_CHUNK, with_strong=False):
    """Spatial weak error; with ``with_strong`` also return the strong report from the same paths."""
    raw = coupled_spatial(cfg, N_list, N_ref, M, K, seed, phi, study="spatial_weak",
                          workers=workers, chunk=chunk)
    weak = _spatial_report("spatial_weak", "weak", cfg, N_list, N_ref, M, K, seed, chunk, raw)
    if not with_strong:
        return weak
    strong = _spatial_report("spatial_strong", "sq", cfg, N_list, N_ref, M, K, seed, chunk, raw)
    return weak, strong


# -- linear analytic oracle -----------------------------------------------------


def linear_strong_error_sq(q, T: float, M: int, N: int, x0=None) -> float:
    """Exact mean-square error of linear backward Euler against the mild solution.

    ``sum_j q_j int_0^T (exp(-lambda_j^2 (T-s)) - (1+tau lambda_j^2)^-(M-floor(s/tau)))^2 ds``
    evaluated interval by interval in closed form, plus the deterministic
    initial-datum term when ``x0`` is given.
    """
    lam = eigenvalues(N)
    a = lam**2
    qv = q.variances(N)
    tau = T / M
    k = np.arange(1, M + 1)[:, None]
    c = (1.0 + tau * a) ** (-(M - k + 1.0))
    # s in [t_{k-1}, t_k): T - s runs over (T - t_k, T - t_{k-1}]
    u0 = (T - k * tau) * a  # exponent at the right end
    u1 = (T - (k - 1) * tau) * a
    i2 = (np.exp(-2 * u0) - np.exp(-2 * u1)) / (2 * a)
    i1 = (np.exp(-u0) - np.exp(-u1)) / a
    total = float(np.sum(qv * np.sum(i2 - 2 * c * i1 + c * c * tau, axis=0)))
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)[:N]
        d = np.exp(-T * a[: x0.size]) - (1.0 + tau * a[: x0.size]) ** (-float(M))
        total += float(np.sum((d * x0) ** 2))
    return total


def linear_oracle_study(cfg: ModelConfig, M_list, N: int, K: int, seed: int, *,
                        M_ref: int | None = None, workers=None, chunk=DEFAULT_CHUNK) -> ErrorReport:
    """Linear backward Euler strong error against the exactly coupled mild solution."""
    cfg = cfg.with_(linear=True, N=N)
    M_list = [int(m) for m in M_list]
    M_ref = M_ref or int(np.lcm.reduce(M_list))
    basis = Basis(N)

    def run(paths):
        table = build_noise_batch(path_seeds(seed, "linear_oracle", paths), cfg.T, M_ref, N, cfg.q)
        exact = simulate_linear_exact(cfg, table, N)
        sq = np.empty((paths.size, len(M_list)))
        for i, M in enumerate(M_list):
            X = simulate_path(cfg.with_(M=M), coarsen(table, M, N), basis, diagnostics=False).final
            sq[:, i] = np.sum((exact - X) ** 2, axis=-1)
        return {"sq": sq}

    raw = _map_chunks(run, K, chunk, workers)
    est, se = strong_from_squares(raw["sq"])
    x0 = cfg.initial_field(N)
    oracle = [math.sqrt(linear_strong_error_sq(cfg.q, cfg.T, M, N, x0)) for M in M_list]
    z = [(e - o) / s if s > 0 else math.inf for e, o, s in zip(est, oracle, se)]
    return ErrorReport("linear_oracle", "M", M_list, est.tolist(), se.tolist(), K,
                       _coupling("exact_linear", M_ref, seed, chunk, N=N), [],
                       {"oracle": oracle, "z_scores": z})
