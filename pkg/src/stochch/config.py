"""Experiment configuration: parsing, defaults, and validation.

Configs are YAML documents (JSON is accepted too, being a YAML subset). A
``report.json`` written by :mod:`stochch.cli` embeds the resolved config under
the ``config`` key and can be fed back in unchanged.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .experiments import TestFunctional, spatial_subdominance
from .integrator import ModelConfig, SolverConfig
from .noise import MAX_MODES, MAX_STEPS, QSpectrum

SCHEMA_VERSION = 1
STUDIES = ("temporal_weak", "temporal_strong", "spatial_weak", "spatial_strong", "invariants", "linear_oracle")

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "study": None,
    "model": {
        "T": 1.0,
        "N": 32,
        "q": {"family": "power_law", "param": 2.0},
        "x0": {1: 1.0},
        "linear": False,
        "solver": {"tol": 1e-12, "max_fixed_point_iters": 50, "max_newton_iters": 20, "damping": 1.0},
    },
    "grids": {},
    "K": 1000,
    "seed": 0,
    "phi": {"kind": "gauss_exp", "sigma": 1.0},
    "chunk": 64,
    "output": {"dir": "out", "noise_table": False},
}

# reference must exceed the finest tested level by these factors
TIME_DOMINANCE = 16
MODE_DOMINANCE = 4


class ConfigError(ValueError):
    """A config that cannot be parsed or violates a model/grid constraint."""


@dataclass
class ExperimentConfig:
    study: str
    model: ModelConfig
    grids: dict
    K: int
    seed: int
    phi: TestFunctional
    chunk: int
    output_dir: str
    dump_noise: bool
    resolved: dict = field(repr=False)


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}.{k}" if path else str(k)
        if k not in base and path not in ("grids", "model.x0", "phi", "model.q"):
            raise ConfigError(f"unknown field '{where}'")
        if isinstance(v, dict) and isinstance(base.get(k), dict) and k != "x0":
            out[k] = _merge(base[k], v, where)
        else:
            out[k] = v
    return out


def load_document(path) -> dict:
    """Read a config (or a report.json embedding one) into a plain dict."""
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: parse error at {where}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if "config" in doc and "report" in doc:
        doc = doc["config"]
    return doc


def _num(value, where, kind=float, positive=True):
    try:
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            x = int(value)
        else:
            x = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{where}': expected {kind.__name__}, got {value!r}") from None
    if positive and not x > 0:
        raise ConfigError(f"field '{where}': must be > 0, got {value!r}")
    return x


def _int_list(value, where):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"field '{where}': expected a non-empty list of integers")
    return [_num(v, f"{where}[{i}]", int) for i, v in enumerate(value)]


def resolve(doc: dict) -> dict:
    """Fill defaults and normalize types; the result is what reports embed."""
    if "schema_version" in doc and doc["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"field 'schema_version': unsupported version {doc['schema_version']!r}")
    r = _merge(DEFAULTS, doc)
    if r["study"] not in STUDIES:
        raise ConfigError(f"field 'study': must be one of {', '.join(STUDIES)}; got {r['study']!r}")
    m = r["model"]
    m["T"] = _num(m["T"], "model.T")
    m["N"] = _num(m["N"], "model.N", int)
    m["linear"] = bool(m["linear"])
    if not isinstance(m["x0"], dict) or not m["x0"]:
        raise ConfigError("field 'model.x0': expected a mapping {mode: coefficient}")
    m["x0"] = {str(_num(k, "model.x0 key", int)): _num(v, f"model.x0.{k}", positive=False)
               for k, v in m["x0"].items()}
    q = m["q"]
    if q.get("family") not in ("power_law", "trace_class"):
        raise ConfigError(f"field 'model.q.family': must be power_law or trace_class, got {q.get('family')!r}")
    m["q"] = {"family": q["family"], "param": _num(q.get("param"), "model.q.param", positive=False)}
    s = m["solver"]
    s["tol"] = _num(s["tol"], "model.solver.tol")
    s["max_fixed_point_iters"] = _num(s["max_fixed_point_iters"], "model.solver.max_fixed_point_iters", int)
    s["max_newton_iters"] = _num(s["max_newton_iters"], "model.solver.max_newton_iters", int)
    s["damping"] = _num(s["damping"], "model.solver.damping")
    g = r["grids"]
    for key in ("M_list", "N_list"):
        if key in g:
            g[key] = _int_list(g[key], f"grids.{key}")
    for key in ("M_ref", "N_ref", "M"):
        if key in g:
            g[key] = _num(g[key], f"grids.{key}", int)
    r["K"] = _num(r["K"], "K", int)
    r["seed"] = _num(r["seed"], "seed", int, positive=False)
    r["chunk"] = _num(r["chunk"], "chunk", int)
    phi = r["phi"]
    if phi.get("kind") == "gauss_exp":
        r["phi"] = {"kind": "gauss_exp", "sigma": _num(phi.get("sigma", 1.0), "phi.sigma")}
    elif phi.get("kind") == "cosine_pairing":
        psi = phi.get("psi")
        if not isinstance(psi, (list, tuple)) or not psi:
            raise ConfigError("field 'phi.psi': expected a non-empty list of coefficients")
        r["phi"] = {"kind": "cosine_pairing", "psi": [_num(v, f"phi.psi[{i}]", positive=False) for i, v in enumerate(psi)]}
    else:
        raise ConfigError(f"field 'phi.kind': must be gauss_exp or cosine_pairing, got {phi.get('kind')!r}")
    r["output"]["dir"] = str(r["output"]["dir"])
    r["output"]["noise_table"] = bool(r["output"]["noise_table"])
    return r


_REQUIRED = {
    "temporal_weak": ("M_list", "M_ref"),
    "temporal_strong": ("M_list", "M_ref"),
    "spatial_weak": ("N_list", "N_ref", "M"),
    "spatial_strong": ("N_list", "N_ref", "M"),
    "linear_oracle": ("M_list",),
    "invariants": (),
}


def checks(r: dict) -> list[tuple[str, str]]:
    """Evaluate every constraint; returns ``(status, message)`` with status OK/WARN/ERROR."""
    out = []
    m = r["model"]
    q = QSpectrum(m["q"]["family"], m["q"]["param"])
    ok, msg = q.admissibility()
    out.append(("OK" if ok else "ERROR", msg))
    x0 = tuple(sorted((int(k), v) for k, v in m["x0"].items()))
    ok, msg = ModelConfig(T=m["T"], N=m["N"], x0=x0).initial_datum_check()
    out.append(("WARN" if "warning" in msg else "OK" if ok else "ERROR", msg))
    g, study = r["grids"], r["study"]
    missing = [k for k in _REQUIRED[study] if k not in g]
    if missing:
        out.append(("ERROR", f"grids: study {study} needs {', '.join('grids.' + k for k in missing)}"))
        return out
    if study.startswith("temporal") or study == "linear_oracle":
        M_ref = g.get("M_ref") or math.lcm(*g["M_list"])
        bad = [M for M in g["M_list"] if M_ref % M]
        for M in bad:
            out.append(("ERROR", f"divisibility: {M_ref} mod {M} != 0"))
        if not bad:
            out.append(("OK", f"divisibility: every M divides M_ref={M_ref}"))
        if M_ref > MAX_STEPS:
            out.append(("ERROR", f"table size: M_ref={M_ref} exceeds {MAX_STEPS}"))
        if m["N"] > MAX_MODES:
            out.append(("ERROR", f"table size: N={m['N']} exceeds {MAX_MODES}"))
        coarse = [M for M in g["M_list"] if M < M_ref]
        if study != "linear_oracle" and coarse and M_ref < TIME_DOMINANCE * max(coarse):
            out.append(("ERROR", f"reference dominance: M_ref={M_ref} < {TIME_DOMINANCE} x {max(coarse)}"))
        if any(M > M_ref for M in g["M_list"]):
            out.append(("ERROR", "reference dominance: a level is finer than M_ref"))
    if study.startswith("spatial"):
        N_ref = g["N_ref"]
        if N_ref > MAX_MODES:
            out.append(("ERROR", f"table size: N_ref={N_ref} exceeds {MAX_MODES}"))
        if g["M"] > MAX_STEPS:
            out.append(("ERROR", f"table size: M={g['M']} exceeds {MAX_STEPS}"))
        if any(N > N_ref for N in g["N_list"]):
            out.append(("ERROR", "nesting: every N must be <= N_ref"))
        coarse = [N for N in g["N_list"] if N < N_ref]
        if coarse and N_ref < MODE_DOMINANCE * max(coarse):
            out.append(("ERROR", f"reference dominance: N_ref={N_ref} < {MODE_DOMINANCE} x {max(coarse)}"))
        ok, msg = spatial_subdominance(m["T"], g["M"], g["N_list"])
        out.append(("OK" if ok else "WARN", msg))
    return out


def cost_estimate(r: dict) -> int:
    """Mode-steps to simulate: ``K * sum(M * N)`` over every level incl. the reference."""
    g, study, K, N = r["grids"], r["study"], r["K"], r["model"]["N"]
    if study in ("temporal_weak", "temporal_strong"):
        levels = set(g["M_list"]) | {g["M_ref"]}
        return K * sum(M * N for M in levels)
    if study == "linear_oracle":
        M_ref = g.get("M_ref") or math.lcm(*g["M_list"])
        return K * (sum(M * N for M in set(g["M_list"])) + M_ref * N)
    if study in ("spatial_weak", "spatial_strong"):
        levels = set(g["N_list"]) | {g["N_ref"]}
        return K * sum(g["M"] * n for n in levels)
    return 0


def build(r: dict) -> ExperimentConfig:
    """Turn a resolved dict into typed configs; raises ConfigError on any ERROR check."""
    errors = [msg for status, msg in checks(r) if status == "ERROR"]
    if errors:
        raise ConfigError(errors[0])
    m = r["model"]
    g = r["grids"]
    M = g.get("M") or g.get("M_ref") or max(g.get("M_list", [1]))
    model = ModelConfig(
        T=m["T"], N=m["N"], M=M,
        q=QSpectrum(m["q"]["family"], m["q"]["param"]),
        x0=tuple(sorted((int(k), v) for k, v in m["x0"].items())),
        solver=SolverConfig(**m["solver"]),
        linear=m["linear"],
    )
    phi = TestFunctional(**{k: (tuple(v) if k == "psi" else v) for k, v in r["phi"].items()})
    return ExperimentConfig(r["study"], model, dict(g), r["K"], r["seed"], phi, r["chunk"],
                            r["output"]["dir"], r["output"]["noise_table"], r)


def load(path) -> ExperimentConfig:
    return build(resolve(load_document(path)))
