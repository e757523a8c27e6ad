"""Fully implicit backward Euler for the spectral Galerkin system.

One step solves

    X + tau A^2 X + tau A P_N F(X) = X_prev + dW

for ``X``. Multiplying by the diagonal resolvent ``R = (I + tau A^2)^-1``
gives the fixed-point form ``X = R (rhs - tau A F(X))``; the residual
``X - R (rhs - tau A F(X))`` is what ``SolverConfig.tol`` bounds, which keeps
the tolerance independent of ``tau`` and ``N``.

Every routine is vectorized over leading axes of the state, so a chunk of
Monte Carlo paths advances in lock-step. Paths that have converged are frozen
while the others keep iterating, which makes each path's result independent
of how long its neighbours take.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .noise import Increments, NoiseTable, QSpectrum
from .nonlinearity import apply_F, f_prime, jacobian_F
from .spectral import Basis, eigenvalues, sobolev_norm


class NonConvergence(RuntimeError):
    """Both the fixed-point and Newton phases failed to reach the tolerance."""

    def __init__(self, message, residual=float("nan"), step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-12
    max_fixed_point_iters: int = 50
    max_newton_iters: int = 20
    damping: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_fixed_point_iters < 1 or self.max_newton_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")


@dataclass
class SolveStats:
    """Per-path solver diagnostics (arrays share the batch shape of the state)."""

    iterations: np.ndarray
    residual: np.ndarray
    newton: np.ndarray

    @property
    def method(self):
        m = np.where(self.newton, "newton", "fixed-point")
        return str(m) if m.ndim == 0 else m


@dataclass(frozen=True)
class ModelConfig:
    """Physical and discretization parameters of one simulation.

    ``x0`` maps mode index to coefficient; modes above ``N`` are dropped by
    the Galerkin projection.
    """

    T: float = 1.0
    N: int = 32
    M: int = 128
    q: QSpectrum = field(default_factory=QSpectrum)
    x0: tuple[tuple[int, float], ...] = ((1, 1.0),)
    solver: SolverConfig = field(default_factory=SolverConfig)
    linear: bool = False

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T must be > 0, got {self.T}")
        if self.N < 1 or self.M < 1:
            raise ValueError("N and M must be positive")
        if any(int(j) < 1 for j, _ in self.x0):
            raise ValueError("initial datum modes are numbered from 1")

    def with_(self, **kw) -> "ModelConfig":
        from dataclasses import replace

        return replace(self, **kw)

    def initial_field(self, n_modes: int | None = None) -> np.ndarray:
        n = self.N if n_modes is None else n_modes
        x = np.zeros(n)
        for j, c in self.x0:
            if int(j) <= n:
                x[int(j) - 1] += float(c)
        return x

    def initial_datum_check(self) -> tuple[bool, str]:
        """Check ``|X_0|_4 < inf`` and flag coefficients decaying slower than ``lambda_j^-2``."""
        modes = sorted(int(j) for j, _ in self.x0)
        x = self.initial_field(max(modes) if modes else 1)
        if not np.all(np.isfinite(x)):
            return False, "initial datum: non-finite coefficients"
        h4 = float(sobolev_norm(x, 4.0))
        msg = f"initial datum: OK (|X_0|_4 = {h4:.6g})"
        lam = eigenvalues(x.size)
        tail = np.abs(x) * lam**2
        if x.size > 4 and np.any(tail[x.size // 2:] > 10 * tail[: x.size // 2].max(initial=0)):
            msg += "; warning: coefficients decay slower than lambda_j^-2"
        return True, msg


def _residual_map(X, rhs, tau, basis, lam, res, linear):
    """Return ``G(X) = R (rhs - tau A F(X))``."""
    if linear:
        return res * rhs
    return res * (rhs - tau * lam * apply_F(X, basis))


def solve_implicit(
    rhs: np.ndarray,
    tau: float,
    basis: Basis | None = None,
    cfg: SolverConfig = SolverConfig(),
    *,
    linear: bool = False,
    x_init: np.ndarray | None = None,
) -> tuple[np.ndarray, SolveStats]:
    """Solve ``(I + tau A^2) X + tau A P_N F(X) = rhs`` for each path in ``rhs``.

    Damped fixed-point iteration runs first. Its map is shifted by a scalar
    ``c`` per path, the midpoint of the range of ``f'`` over the grid at the
    initial guess:

        X <- (I + tau A^2 + c tau A)^-1 (rhs - tau A (F(X) - c X))

    which has the same fixed points as the plain map but a smaller contraction
    factor. A path whose residual grows, or that exhausts
    ``max_fixed_point_iters``, is handed to a Newton solve with backtracking
    that starts from its best iterate.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    if not np.all(np.isfinite(rhs)):
        raise FloatingPointError("right-hand side contains non-finite entries")
    shape = rhs.shape
    n = shape[-1]
    basis = basis if basis is not None else Basis(n)
    if basis.n_modes != n:
        raise ValueError(f"state has {n} modes, basis has {basis.n_modes}")
    B = rhs.reshape(-1, n)
    P = B.shape[0]
    lam = basis.lambdas
    res = 1.0 / (1.0 + tau * lam**2)

    X = res * B if x_init is None else np.array(x_init, dtype=np.float64).reshape(-1, n)
    if linear:
        shifted = res
        c = np.zeros((P, 1))
    else:
        fp = f_prime(basis.to_physical(X))
        # c >= -1 and lambda_1 > 1 keep the shifted operator positive
        c = 0.5 * (fp.min(axis=1) + fp.max(axis=1))[:, None]
        shifted = 1.0 / (1.0 + tau * lam**2 + tau * c * lam)
    iters = np.zeros(P, dtype=np.int64)
    final_res = np.full(P, np.inf)
    newton = np.zeros(P, dtype=bool)
    active = np.ones(P, dtype=bool)
    best_X = X.copy()
    best_r = np.full(P, np.inf)
    prev_r = np.full(P, np.inf)
    omega = cfg.damping

    for _ in range(cfg.max_fixed_point_iters):
        FX = 0.0 if linear else apply_F(X, basis)
        r = np.sqrt(np.sum((X - res * (B - tau * lam * FX)) ** 2, axis=1))
        r = np.where(np.isfinite(r), r, np.inf)
        iters += active
        better = active & (r < best_r)
        best_X[better] = X[better]
        best_r[better] = r[better]
        done = active & (r <= cfg.tol)
        final_res[done] = r[done]
        active &= ~done
        # growth after the first sweep means the map is not contracting here
        stalled = active & (iters > 1) & (r > prev_r)
        active &= ~stalled
        if not active.any():
            break
        prev_r = r
        G = shifted * (B - tau * lam * (FX - c * X))
        X = np.where(active[:, None], (1.0 - omega) * X + omega * G, X)
        X = np.where(np.isfinite(X), X, best_X)

    todo = ~np.isfinite(final_res) | (final_res > cfg.tol)
    if todo.any():
        idx = np.flatnonzero(todo)
        Xn, rn, it_n = _newton(best_X[idx], B[idx], tau, basis, lam, res, cfg, linear)
        X[idx] = Xn
        final_res[idx] = rn
        iters[idx] += it_n
        newton[idx] = True
        failed = ~(rn <= cfg.tol)
        if failed.any():
            worst = float(np.max(np.where(np.isfinite(rn), rn, np.inf)))
            raise NonConvergence(
                f"implicit solve failed for {int(failed.sum())} path(s); residual {worst:.3e}",
                residual=worst,
            )
    stats = SolveStats(iters.reshape(shape[:-1]), final_res.reshape(shape[:-1]), newton.reshape(shape[:-1]))
    return X.reshape(shape), stats


def _newton(X, B, tau, basis, lam, res, cfg, linear):
    """Newton with backtracking on ``H(X) = X - R (rhs - tau A F(X))``."""
    P, n = X.shape
    eye = np.eye(n)
    iters = np.zeros(P, dtype=np.int64)
    G = _residual_map(X, B, tau, basis, lam, res, linear)
    Hx = X - G
    r = np.sqrt(np.sum(Hx**2, axis=1))
    active = ~(r <= cfg.tol)
    for _ in range(cfg.max_newton_iters):
        if not active.any():
            break
        a = np.flatnonzero(active)
        if linear:
            J = np.broadcast_to(eye, (a.size, n, n))
        else:
            J = eye + (tau * res * lam)[:, None] * jacobian_F(X[a], basis)
        step = np.linalg.solve(J, -Hx[a][..., None])[..., 0]
        t = np.ones(a.size)
        accepted = np.zeros(a.size, dtype=bool)
        newX = X[a].copy()
        newH = Hx[a].copy()
        newr = r[a].copy()
        for _ls in range(30):
            trial = X[a] + t[:, None] * step
            Gt = _residual_map(trial, B[a], tau, basis, lam, res, linear)
            Ht = trial - Gt
            rt = np.sqrt(np.sum(Ht**2, axis=1))
            ok = ~accepted & np.isfinite(rt) & (rt < (1.0 - 1e-4 * t) * r[a])
            newX[ok], newH[ok], newr[ok] = trial[ok], Ht[ok], rt[ok]
            accepted |= ok
            if accepted.all():
                break
            t = np.where(accepted, t, 0.5 * t)
        # a full step that cannot decrease the residual any further has hit rounding
        stuck = ~accepted
        iters[a] += 1
        X[a], Hx[a], r[a] = newX, newH, newr
        conv = r[a] <= cfg.tol
        active[a[conv | stuck]] = False
    return X, r, iters


def backward_euler_step(
    X_prev: np.ndarray,
    dW: np.ndarray,
    tau: float,
    basis: Basis | None = None,
    cfg: SolverConfig = SolverConfig(),
    *,
    linear: bool = False,
) -> tuple[np.ndarray, SolveStats]:
    """One step ``X - X_prev + tau A^2 X + tau A P_N F(X) = dW``."""
    return solve_implicit(np.asarray(X_prev) + np.asarray(dW), tau, basis, cfg, linear=linear)


def step_defect(X, X_prev, dW, tau, basis: Basis | None = None, *, linear=False) -> np.ndarray:
    """Preconditioned defect ``|R (X - X_prev - dW + tau A^2 X + tau A F(X))|_0``, F recomputed."""
    X = np.asarray(X, dtype=np.float64)
    lam = eigenvalues(X.shape[-1])
    d = X - np.asarray(X_prev) - np.asarray(dW) + tau * lam**2 * X
    if not linear:
        d = d + tau * lam * apply_F(X, basis)
    return np.sqrt(np.sum((d / (1.0 + tau * lam**2)) ** 2, axis=-1))


@dataclass
class PathResult:
    """Terminal state plus running diagnostics for a batch of paths."""

    final: np.ndarray
    sup_V: np.ndarray
    sup_H2: np.ndarray
    iterations: int
    newton_steps: int
    max_residual: float
    trajectory: np.ndarray | None = None


def simulate_path(
    cfg: ModelConfig,
    increments,
    basis: Basis | None = None,
    *,
    keep_trajectory: bool = False,
    diagnostics: bool = True,
) -> PathResult:
    """Integrate ``M`` backward Euler steps driven by ``increments``.

    ``increments`` is an :class:`~stochch.noise.Increments` or an array of
    shape ``(..., M, N)`` of physical increments. Leading axes are paths.
    """
    dW = increments.values if isinstance(increments, Increments) else np.asarray(increments, dtype=np.float64)
    if dW.shape[-2] != cfg.M:
        raise ValueError(f"expected {cfg.M} increments, got {dW.shape[-2]}")
    if dW.shape[-1] != cfg.N:
        raise ValueError(f"expected {cfg.N} modes in the increments, got {dW.shape[-1]}")
    if not np.all(np.isfinite(dW)):
        raise FloatingPointError("increments contain non-finite entries")
    basis = basis if basis is not None else Basis(cfg.N)
    tau = cfg.T / cfg.M
    batch = dW.shape[:-2]
    X = np.broadcast_to(cfg.initial_field(), batch + (cfg.N,)).copy()
    traj = [X.copy()] if keep_trajectory else None
    sup_V = np.zeros(batch)
    sup_H2 = np.zeros(batch)
    if diagnostics:
        sup_V = np.max(np.abs(basis.to_physical(X)), axis=-1)
        sup_H2 = sobolev_norm(X, 2.0)
    total_iters = newton_steps = 0
    max_res = 0.0
    for m in range(cfg.M):
        try:
            X, st = solve_implicit(X + dW[..., m, :], tau, basis, cfg.solver, linear=cfg.linear)
        except NonConvergence as exc:
            exc.step = m + 1
            raise NonConvergence(f"step {m + 1}: {exc}", exc.residual, m + 1) from None
        total_iters += int(np.sum(st.iterations))
        newton_steps += int(np.sum(st.newton))
        max_res = max(max_res, float(np.max(st.residual, initial=0.0)))
        if diagnostics:
            sup_V = np.maximum(sup_V, np.max(np.abs(basis.to_physical(X)), axis=-1))
            sup_H2 = np.maximum(sup_H2, sobolev_norm(X, 2.0))
        if keep_trajectory:
            traj.append(X.copy())
    return PathResult(
        X, sup_V, sup_H2, total_iters, newton_steps, max_res,
        np.stack(traj, axis=-2) if keep_trajectory else None,
    )


def linear_recursion(cfg: ModelConfig, increments) -> np.ndarray:
    """Closed-form linear backward Euler: sum of resolvent powers applied to the data."""
    dW = increments.values if isinstance(increments, Increments) else np.asarray(increments)
    M = dW.shape[-2]
    tau = cfg.T / M
    lam = eigenvalues(cfg.N)
    r = 1.0 / (1.0 + tau * lam**2)
    powers = r[None, :] ** (M - np.arange(M) )[:, None]  # exponent M - m + 1 for m = 1..M
    return r**M * cfg.initial_field() + np.sum(powers * dW, axis=-2)


def bridge_coefficients(lambdas: np.ndarray, q: np.ndarray, dt: float):
    """Split the exact OU innovation over one step into ``beta * dW + sigma * Z``.

    ``beta = Cov(I, dW) / Var(dW)`` and ``sigma^2`` is the conditional
    variance of ``I = int exp(-lambda^2 (t1 - s)) dW(s)`` given ``dW``.
    """
    y = lambdas**2 * dt
    beta = -np.expm1(-y) / y
    with np.errstate(invalid="ignore", divide="ignore"):
        g = -np.expm1(-2 * y) / (2 * y) - beta**2
    # series of g for small y avoids cancellation
    small = y < 2e-2
    ys = y[small]
    g[small] = ys**2 / 12 - ys**3 / 12 + 17 * ys**4 / 360 - 7 * ys**5 / 360 + 43 * ys**6 / 6720
    g = np.maximum(g, 0.0)
    return beta, np.sqrt(q * dt * g)


def simulate_linear_exact(cfg: ModelConfig, table: NoiseTable, N: int | None = None) -> np.ndarray:
    """Exact solution of the linear equation at ``T``, coupled to ``table``.

    Per fine step the OU innovation is decomposed into its regression on the
    table's Brownian increment plus an independent remainder drawn from a
    dedicated stream. The result has exactly the law of the linear mild
    solution and is correlated with any scheme driven by the same table.
    """
    if not cfg.linear:
        warnings.warn("simulate_linear_exact ignores the nonlinearity", stacklevel=2)
    N = cfg.N if N is None else N
    if abs(cfg.T - table.T) > 1e-12 * cfg.T:
        raise ValueError(f"model horizon {cfg.T} differs from table horizon {table.T}")
    if N > table.N_ref:
        raise ValueError(f"N={N} exceeds table modes {table.N_ref}")
    lam = eigenvalues(N)
    q = table.q.variances(N)
    dt = table.tau_ref
    beta, sigma = bridge_coefficients(lam, q, dt)
    dW = table.normals[..., :N] * table.scale[:N]
    Z = table.bridge_normals(N)
    M = table.M_ref
    # weight of step i (ending at t_{i+1}) at time T
    w = np.exp(-np.outer(M - 1 - np.arange(M), dt * lam**2))
    x0 = np.exp(-cfg.T * lam**2) * cfg.initial_field(N)
    out = x0 + np.sum(w * (beta * dW + sigma * Z), axis=-2)
    return out
