"""Command-line entry point: ``stochch run|validate|invariants|version``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, checks, cost_estimate, load_document, resolve, build
from .experiments import (
    WORKERS_ENV,
    NoSignal,
    dumps_json,
    estimate_strong_error_spatial,
    estimate_strong_error_temporal,
    estimate_weak_error_spatial,
    estimate_weak_error_temporal,
    fit_rate,
    linear_oracle_study,
    path_seeds,
)
from .integrator import NonConvergence
from .invariants import run_all
from .noise import build_noise_table, save_table


def _fit(report, T):
    try:
        return fit_rate(report.h(T), report.estimates, report.std_errors).to_dict(), None
    except NoSignal as exc:
        return None, str(exc)


def _weak_bound(weak, strong, phi):
    """Per-level check ``|weak| <= strong * sup|Phi'| + 2 SE``."""
    L = phi.d1_bound
    rows = []
    for lvl, w, sw, s in zip(weak.grid, weak.estimates, weak.std_errors, strong.estimates):
        bound = s * L + 2.0 * sw
        rows.append({"level": lvl, "weak": w, "bound": bound, "ok": abs(w) <= bound})
    return rows


def execute(exp: ExperimentConfig, workers=None) -> dict:
    """Run the study and return the report.json payload (no timestamps)."""
    cfg, g, K, seed, chunk = exp.model, exp.grids, exp.K, exp.seed, exp.chunk
    payload = {"config": exp.resolved, "study": exp.study}
    if exp.study == "invariants":
        results = run_all()
        payload["report"] = {
            "passed": sum(r.passed for r in results),
            "failed": sum(not r.passed for r in results),
            "results": [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results],
        }
        return payload
    extra = {}
    if exp.study == "temporal_weak":
        rep = estimate_weak_error_temporal(cfg, g["M_list"], g["M_ref"], cfg.N, K, exp.phi, seed,
                                           workers=workers, chunk=chunk)
    elif exp.study == "temporal_strong":
        rep = estimate_strong_error_temporal(cfg, g["M_list"], g["M_ref"], cfg.N, K, seed,
                                             workers=workers, chunk=chunk)
    elif exp.study == "spatial_strong":
        rep = estimate_strong_error_spatial(cfg, g["N_list"], g["N_ref"], g["M"], K, seed,
                                            workers=workers, chunk=chunk)
    elif exp.study == "spatial_weak":
        rep, strong = estimate_weak_error_spatial(cfg, g["N_list"], g["N_ref"], g["M"], K, exp.phi, seed,
                                                  workers=workers, chunk=chunk, with_strong=True)
        extra["strong"] = strong.to_dict()
        extra["weak_bound"] = _weak_bound(rep, strong, exp.phi)
    else:
        rep = linear_oracle_study(cfg, g["M_list"], cfg.N, K, seed, M_ref=g.get("M_ref"),
                                  workers=workers, chunk=chunk)
    fit, why = _fit(rep, cfg.T)
    payload["report"] = rep.to_dict()
    payload["fit"] = fit
    if why:
        payload["fit_skipped"] = why
    payload.update(extra)
    return payload


def _reference_table(exp: ExperimentConfig):
    g, cfg = exp.grids, exp.model
    if exp.study.startswith("spatial"):
        M, N = g["M"], g["N_ref"]
    else:
        M, N = g.get("M_ref") or math.lcm(*g["M_list"]), cfg.N
    seed = path_seeds(exp.seed, exp.study, [0])[0]
    return build_noise_table(seed, cfg.T, M, N, cfg.q)


PLOT_TEMPLATE = """\
# gnuplot script: error versus level on log-log axes
set datafile separator ','
set logscale xy
set xlabel '{level}'
set ylabel 'error estimate'
set key top right
set title '{study}'
set terminal pngcairo size 800,600
set output '{study}.png'
plot 'report.csv' every ::1 using 1:2:3 with yerrorbars title 'estimate +/- SE', \\
     'report.csv' every ::1 using 1:2 with lines notitle{fit_line}
"""


def plot_script(payload: dict) -> str:
    rep = payload["report"]
    fit = payload.get("fit")
    fit_line = ""
    if fit:
        T = payload["config"]["model"]["T"]
        h = f"({T}/x)" if rep["level_name"] == "M" else "(1.0/x)"
        fit_line = (f", \\\n     exp({fit['intercept']!r}) * {h}**{fit['slope']!r} "
                    f"with lines dashtype 2 title 'fit slope {fit['slope']:.3f}'")
    return PLOT_TEMPLATE.format(level=rep["level_name"], study=payload["study"], fit_line=fit_line)


def invariants_csv(payload: dict) -> str:
    lines = ["name,passed"]
    lines += [f"{r['name']},{int(r['passed'])}" for r in payload["report"]["results"]]
    return "\n".join(lines) + "\n"


def write_outputs(payload: dict, exp: ExperimentConfig, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        p = out / name
        p.write_text(text)
        written.append(p)

    put("report.json", dumps_json(payload))
    if exp.study == "invariants":
        put("report.csv", invariants_csv(payload))
    else:
        from .experiments import ErrorReport

        rep = ErrorReport(**payload["report"])
        put("report.csv", rep.to_csv())
        put("plot.gp", plot_script(payload))
        if exp.dump_noise:
            p = out / "noise_table.bin"
            save_table(_reference_table(exp), p)
            written.append(p)
    manifest = {
        "tool": "stochch",
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "seed": exp.seed,
        "config": exp.resolved,
        "files": sorted(p.name for p in written),
    }
    put("manifest.json", dumps_json(manifest))
    return written


# -- verbs ----------------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        r = resolve(load_document(args.config))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    results = checks(r)
    for status, msg in results:
        print(f"[{status}] {msg}")
    bad = [m for s, m in results if s == "ERROR"]
    if not bad:
        print(f"cost estimate: {cost_estimate(r)} mode-steps (K x sum of M x N over levels)")
    print("resolved config:")
    print(json.dumps(r, indent=2, sort_keys=True))
    if bad:
        print(f"error: {bad[0]}", file=sys.stderr)
        return 2
    return 0


def cmd_run(args) -> int:
    try:
        r = resolve(load_document(args.config))
        if args.out:
            r["output"]["dir"] = str(args.out)
        exp = build(r)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        payload = execute(exp, workers=args.workers)
    except (NonConvergence, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(exp.output_dir)
    for p in write_outputs(payload, exp, out):
        print(f"wrote {p}")
    if exp.study == "invariants":
        rep = payload["report"]
        print(f"invariants: {rep['passed']} passed, {rep['failed']} failed")
        return 0 if rep["failed"] == 0 else 1
    fit = payload.get("fit")
    if fit:
        ci = "inf" if fit["ci95"] is None else f"{fit['ci95']:.4f}"
        print(f"fitted slope {fit['slope']:.4f} +/- {ci} over {fit['n_points']} points")
    else:
        print(f"no fit: {payload.get('fit_skipped')}")
    return 0


def cmd_invariants(args) -> int:
    results = run_all()
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed} passed, {failed} failed")
    return 0 if failed == 0 else 1


def cmd_version(args) -> int:
    print(f"stochch {__version__}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="stochch",
        description="Stochastic Cahn-Hilliard solver and convergence harness.",
        epilog=f"Worker threads default to the CPU count; override with {WORKERS_ENV}.",
    )
    sub = p.add_subparsers(dest="verb", required=True)
    run = sub.add_parser("run", help="run a study and write reports")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides output.dir)")
    run.add_argument("--workers", type=int, default=None, help=f"worker threads (default: ${WORKERS_ENV} or CPU count)")
    run.set_defaults(fn=cmd_run)
    val = sub.add_parser("validate", help="check a config without computing")
    val.add_argument("config")
    val.set_defaults(fn=cmd_validate)
    sub.add_parser("invariants", help="run the property suites").set_defaults(fn=cmd_invariants)
    sub.add_parser("version", help="print the version").set_defaults(fn=cmd_version)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
