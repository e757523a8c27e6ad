"""Q-Wiener increments with nested refinement, and exact stochastic convolution.

Every random draw comes from a counter-based Philox stream keyed by
``(seed, stream, mode)``. Mode ``j`` therefore sees the same numbers no matter
how many modes the table holds, and tables built on different threads (or in
a different order) are bit-identical.

Standard normals are rounded to a dyadic grid of spacing ``2**-36``. Sums of
up to 4096 of them are then exact in float64, so coarsening in time is exact
and associative: summing fine increments in any grouping yields the same bits.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .spectral import eigenvalues

MAX_MODES = 256
MAX_STEPS = 4096

_QUANTUM = 2.0 ** 36

# Philox key word 1 = (stream << 32) | mode
STREAM_INCREMENTS = 0
STREAM_BRIDGE = 1
STREAM_CONVOLUTION = 2


class InadmissibleNoise(ValueError):
    """The covariance violates the trace condition ``||A^(1/2) Q^(1/2)||_HS < inf``."""


def derive_seed(master: int, *labels) -> int:
    """Hash a master seed and labels into an independent 64-bit seed."""
    text = "/".join([str(int(master))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def _stream(seed: int, stream: int, mode: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, (stream << 32) | mode], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def standard_normals(seed: int, stream: int, n_draws: int, n_modes: int) -> np.ndarray:
    """``(n_draws, n_modes)`` dyadic-rounded standard normals, column j from mode j+1."""
    out = np.empty((n_draws, n_modes))
    for j in range(n_modes):
        out[:, j] = _stream(seed, stream, j + 1).standard_normal(n_draws)
    return np.round(out * _QUANTUM) / _QUANTUM


@dataclass(frozen=True)
class QSpectrum:
    """Diagonal covariance of the Q-Wiener process in the cosine eigenbasis.

    ``power_law``: ``q_j = lambda_j^(-r)``, admissible iff ``r > 3/2``.
    ``trace_class``: ``q_j = j^(-s)``, admissible iff ``s > 3``.
    ``explicit``: user-supplied finite variances (always admissible since the
    sum is finite).
    """

    family: str = "power_law"
    param: float = 2.0
    values: tuple[float, ...] | None = None

    @classmethod
    def power_law(cls, r: float = 2.0) -> "QSpectrum":
        return cls("power_law", float(r))

    @classmethod
    def trace_class(cls, s: float) -> "QSpectrum":
        return cls("trace_class", float(s))

    @classmethod
    def explicit(cls, q) -> "QSpectrum":
        return cls("explicit", float("nan"), tuple(float(x) for x in q))

    def admissibility(self) -> tuple[bool, str]:
        """Return ``(ok, message)`` for the trace condition."""
        if self.family == "power_law":
            r = self.param
            if r > 1.5:
                return True, f"noise admissibility: OK (r={r:g} > 3/2)"
            return False, f"noise admissibility: power-law exponent {r:g} <= 3/2"
        if self.family == "trace_class":
            s = self.param
            if s > 3:
                return True, f"noise admissibility: OK (s={s:g} > 3)"
            return False, f"noise admissibility: trace-class exponent {s:g} <= 3"
        if self.family == "explicit":
            q = np.asarray(self.values if self.values is not None else (), dtype=float)
            if q.size == 0:
                return False, "noise admissibility: explicit spectrum is empty"
            if not np.all(np.isfinite(q)) or np.any(q < 0):
                return False, "noise admissibility: explicit variances must be finite and >= 0"
            return True, "noise admissibility: OK (explicit finite spectrum)"
        return False, f"noise admissibility: unknown family {self.family!r}"

    def check(self) -> None:
        ok, msg = self.admissibility()
        if not ok:
            raise InadmissibleNoise(msg)

    def variances(self, n_modes: int) -> np.ndarray:
        if self.family == "power_law":
            return eigenvalues(n_modes) ** (-self.param)
        if self.family == "trace_class":
            return np.arange(1, n_modes + 1, dtype=np.float64) ** (-self.param)
        if self.family == "explicit":
            q = np.zeros(n_modes)
            vals = np.asarray(self.values, dtype=np.float64)[:n_modes]
            q[: vals.size] = vals
            return q
        raise InadmissibleNoise(f"unknown family {self.family!r}")

    def trace_norm_sq(self, n_modes: int) -> float:
        """Truncated ``||A^(1/2) Q^(1/2)||_HS^2 = sum_j lambda_j q_j``."""
        return float(np.sum(eigenvalues(n_modes) * self.variances(n_modes)))


@dataclass(frozen=True)
class Increments:
    """Brownian increments on a uniform grid of ``n_steps`` over ``[0, T]``.

    ``sums[..., m, j]`` is the exact sum of the standard normals spanned by
    coarse step ``m``; ``scale[j] = sqrt(q_j * tau_fine)`` converts to physical
    increments.
    """

    T: float
    sums: np.ndarray
    scale: np.ndarray
    fine_steps: int

    @property
    def n_steps(self) -> int:
        return self.sums.shape[-2]

    @property
    def n_modes(self) -> int:
        return self.sums.shape[-1]

    @property
    def tau(self) -> float:
        return self.T / self.n_steps

    @property
    def values(self) -> np.ndarray:
        return self.sums * self.scale


@dataclass(frozen=True)
class NoiseTable:
    """Finest-level standard normals for one or more sample paths.

    ``normals`` has shape ``(P, M_ref, N_ref)``; path ``p`` was drawn from
    ``seeds[p]``.
    """

    seeds: tuple[int, ...]
    T: float
    M_ref: int
    N_ref: int
    q: QSpectrum
    normals: np.ndarray = field(repr=False)

    @property
    def seed(self) -> int:
        return self.seeds[0]

    @property
    def tau_ref(self) -> float:
        return self.T / self.M_ref

    @property
    def variances(self) -> np.ndarray:
        return self.q.variances(self.N_ref)

    @property
    def scale(self) -> np.ndarray:
        return np.sqrt(self.variances * self.tau_ref)

    @property
    def increments(self) -> Increments:
        return Increments(self.T, self.normals, self.scale, self.M_ref)

    def bridge_normals(self, n_modes: int | None = None) -> np.ndarray:
        """Independent normals used to complete the exact convolution coupling."""
        n = self.N_ref if n_modes is None else n_modes
        return np.stack([standard_normals(s, STREAM_BRIDGE, self.M_ref, n) for s in self.seeds])

    def dumps(self) -> bytes:
        return dump_table(self)


def _check_sizes(T: float, M_ref: int, N_ref: int) -> None:
    if not T > 0:
        raise ValueError(f"horizon T must be > 0, got {T}")
    if not 1 <= M_ref <= MAX_STEPS:
        raise ValueError(f"M_ref must be in [1, {MAX_STEPS}], got {M_ref}")
    if not 1 <= N_ref <= MAX_MODES:
        raise ValueError(f"N_ref must be in [1, {MAX_MODES}], got {N_ref}")


def build_noise_batch(seeds, T: float, M_ref: int, N_ref: int, q: QSpectrum) -> NoiseTable:
    """Build one finest-level table per seed, stacked along a leading path axis."""
    _check_sizes(T, M_ref, N_ref)
    q.check()
    seeds = tuple(int(s) for s in seeds)
    normals = np.stack([standard_normals(s, STREAM_INCREMENTS, M_ref, N_ref) for s in seeds])
    normals.setflags(write=False)
    return NoiseTable(seeds, float(T), M_ref, N_ref, q, normals)


def build_noise_table(seed: int, T: float, M_ref: int, N_ref: int, q: QSpectrum) -> NoiseTable:
    return build_noise_batch([seed], T, M_ref, N_ref, q)


def coarsen(source, M: int, N: int | None = None) -> Increments:
    """Sum fine increments into ``M`` coarse steps, keeping modes ``1..N``.

    ``source`` is a :class:`NoiseTable` or an already coarsened
    :class:`Increments`. No resampling happens: coarse step ``m`` is the exact
    sum of the fine increments it spans.
    """
    inc = source.increments if isinstance(source, NoiseTable) else source
    n_fine, n_modes = inc.n_steps, inc.n_modes
    N = n_modes if N is None else N
    if not 1 <= N <= n_modes:
        raise ValueError(f"N={N} must be in [1, {n_modes}]")
    if M < 1 or n_fine % M:
        raise ValueError(f"{n_fine} steps cannot be coarsened to M={M} ({n_fine} mod {M} != 0)")
    sums = inc.sums[..., :N]
    if M != n_fine:
        ratio = n_fine // M
        sums = sums.reshape(sums.shape[:-2] + (M, ratio, N)).sum(axis=-2)
    return Increments(inc.T, sums, inc.scale[:N], inc.fine_steps)


def ou_transition(lambdas: np.ndarray, q: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Decay factor and innovation std of ``dO = -lambda^2 O dt + sqrt(q) dB`` over ``dt``."""
    rate = lambdas**2
    decay = np.exp(-rate * dt)
    var = q * (-np.expm1(-2.0 * rate * dt)) / (2.0 * rate)
    return decay, np.sqrt(var)


def sample_convolution_path(seed, times, q: QSpectrum, N: int) -> np.ndarray:
    """Exact samples of the stochastic convolution at the given times.

    Each mode is an Ornstein-Uhlenbeck process with rate ``lambda_j^2``, so the
    transition between grid points is sampled exactly. ``seed`` may be a
    single int (returns ``(len(times), N)``) or a sequence (returns
    ``(P, len(times), N)``).
    """
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size == 0 or times[0] != 0:
        raise ValueError("times must be a 1-D grid starting at 0")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    q.check()
    single = np.isscalar(seed)
    seeds = [int(seed)] if single else [int(s) for s in seed]
    lam = eigenvalues(N)
    qv = q.variances(N)
    n_t = times.size
    out = np.zeros((len(seeds), n_t, N))
    for p, s in enumerate(seeds):
        z = standard_normals(s, STREAM_CONVOLUTION, max(n_t - 1, 1), N)
        x = np.zeros(N)
        for i in range(1, n_t):
            decay, std = ou_transition(lam, qv, times[i] - times[i - 1])
            x = decay * x + std * z[i - 1]
            out[p, i] = x
    return out[0] if single else out


def convolution_h3_moment(q: QSpectrum, N: int, t: float) -> float:
    """Closed form ``E |O_t|_3^2 = sum_j lambda_j^3 q_j (1 - exp(-2 lambda_j^2 t)) / (2 lambda_j^2)``."""
    lam = eigenvalues(N)
    return float(np.sum(lam**3 * q.variances(N) * -np.expm1(-2 * lam**2 * t) / (2 * lam**2)))


# -- binary dump/load ---------------------------------------------------------

_MAGIC = b"SCHNOISE"
_VERSION = 1
_FAMILIES = {"power_law": 0, "trace_class": 1}
_HEADER = struct.Struct("<8sIIQdQQd")


def dump_table(table: NoiseTable) -> bytes:
    """Serialize a single-path table: fixed header, then row-major little-endian f64 normals."""
    if len(table.seeds) != 1:
        raise ValueError("only single-path tables can be dumped")
    if table.q.family not in _FAMILIES:
        raise ValueError(f"cannot dump family {table.q.family!r}")
    buf = io.BytesIO()
    buf.write(
        _HEADER.pack(
            _MAGIC, _VERSION, _FAMILIES[table.q.family], table.seed,
            table.T, table.M_ref, table.N_ref, table.q.param,
        )
    )
    buf.write(np.ascontiguousarray(table.normals[0], dtype="<f8").tobytes())
    return buf.getvalue()


def load_table(data: bytes) -> NoiseTable:
    if len(data) < _HEADER.size:
        raise ValueError("truncated noise table header")
    magic, version, fam, seed, T, M_ref, N_ref, param = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError("not a noise table (bad magic)")
    if version != _VERSION:
        raise ValueError(f"unsupported noise table version {version}")
    family = {v: k for k, v in _FAMILIES.items()}.get(fam)
    if family is None:
        raise ValueError(f"unknown family code {fam}")
    payload = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if payload.size != M_ref * N_ref:
        raise ValueError(f"payload holds {payload.size} values, expected {M_ref * N_ref}")
    normals = payload.astype(np.float64).reshape(1, M_ref, N_ref)
    normals.setflags(write=False)
    return NoiseTable((seed,), T, int(M_ref), int(N_ref), QSpectrum(family, param), normals)


def save_table(table: NoiseTable, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_table(table))


def read_table(path) -> NoiseTable:
    with open(path, "rb") as fh:
        return load_table(fh.read())

