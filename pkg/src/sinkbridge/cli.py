"""Command-line front end: config parsing, dispatch, artifact emission.

Exit codes: 0 success, 1 validation error, 2 numeric failure (tolerance not
reached, solver non-convergence) with the partial report still written.
Output lands in --out-dir, defaulting to $SB_OUTPUT_DIR, then ".".
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import serialize
from .ensembles import EntryKind, ExperimentConfig, build_config_matrices, subexp_params, variance_of
from .errors import EigensolverFailure, LeftHalfPlane, MaxIterationsError, SinkbridgeError
from .experiments import (
    LimitSequenceSpec,
    run_clt_experiment,
    run_concentration_experiment,
    run_deterministic_limit_experiment,
    run_esd_experiment,
)
from .scaling import Gauge, Potentials, ScalingProblem, check_scalability, sinkhorn_scale
from .spectral import flatness_smax, solve_dyson
from .stability import concentration_constants, run_stability_inequality_suite
from ._version import __version__

__all__ = ["main"]


def _out_dir(args) -> Path:
    root = args.out_dir or os.environ.get("SB_OUTPUT_DIR") or "."
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(path, seed_override=None, trials_override=None) -> ExperimentConfig:
    with open(path) as fh:
        d = json.load(fh)
    if seed_override is not None:
        d["seed"] = seed_override
    if trials_override is not None:
        d["trials"] = trials_override
    return ExperimentConfig.from_dict(d)


def _emit(obj):
    print(json.dumps(serialize._jsonable(obj), indent=2))


def _cmd_scale(args) -> int:
    out = _out_dir(args)
    problem = ScalingProblem(serialize.read_matrix(args.matrix),
                             serialize.read_margins_json(args.margins))
    gauge = Gauge(args.gauge)
    try:
        res = sinkhorn_scale(problem, tol=args.tol, max_iter=args.max_iter, gauge=gauge)
    except MaxIterationsError as exc:
        json.dump({"error": "MaxIterations", "message": str(exc),
                   "iterations": exc.iterations, "margin_error": exc.margin_error},
                  sys.stderr, indent=2)
        sys.stderr.write("\n")
        if exc.alpha is not None:
            # partial potentials at the point the iteration stopped
            serialize.write_potentials_json(
                out / "potentials_partial.json",
                Potentials(exc.alpha, exc.beta, gauge))
        return 2
    serialize.write_potentials_json(out / "potentials.json", res.potentials)
    serialize.write_matrix_csv(out / "rescaled.csv", res.rescaled)
    _emit({"iterations": res.iterations, "final_margin_error": res.final_margin_error,
           "gauge": gauge.value, "outputs": ["potentials.json", "rescaled.csv"]})
    return 0


def _cmd_check(args) -> int:
    out = _out_dir(args)
    A = serialize.read_matrix(args.matrix)
    margins = serialize.read_margins_json(args.margins)
    verdict = check_scalability(A, margins, exact=True if args.exact else None)
    payload = {"scalable": verdict.scalable, "method": verdict.method}
    if verdict.witness is not None:
        payload["witness"] = {"I": list(verdict.witness[0]), "J": list(verdict.witness[1]),
                              "indexing": "0-based"}
    serialize.write_json(out / "verdict.json", payload)
    _emit(payload)
    return 0


def _cmd_constants(args) -> int:
    out = _out_dir(args)
    if args.config:
        cfg = _load_config(args.config, seed_override=args.seed)
        lam, margins = build_config_matrices(cfg)
        dist = cfg.dist
    else:
        lam = serialize.read_matrix(args.matrix)
        margins = serialize.read_margins_json(args.margins)
        dist = EntryKind(args.dist) if args.dist else None
    problem = ScalingProblem(lam, margins)
    if args.sigma is not None and args.R is not None:
        sigma, R = args.sigma, args.R
    elif dist is not None:
        sigma, R = subexp_params(dist, float(lam.max()))
    else:
        raise SinkbridgeError("provide --sigma/--R or a --dist to derive them")
    s_max = None
    if dist is not None:
        pot = sinkhorn_scale(problem, tol=1e-12, max_iter=200_000).potentials
        s_max = flatness_smax(pot, variance_of(dist, lam))
    consts = concentration_constants(problem, sigma, R, args.D, s_max=s_max)
    payload = consts.as_dict()
    payload.update({"sigma": sigma, "R": R, "D": args.D, "s_max": s_max})
    serialize.write_json(out / "constants.json", payload)
    _emit(payload)
    return 0


def _cmd_stability_sweep(args) -> int:
    out = _out_dir(args)
    report = run_stability_inequality_suite(args.instances, seed=args.seed or 0)
    serialize.write_json(out / "stability_sweep.json", report)
    serialize.write_columns_csv(
        out / "stability_records.csv",
        ["instance_id", "inequality", "lhs", "rhs", "holds"],
        [np.array([r["instance_id"] for r in report["records"]]),
         np.array([r["inequality"] for r in report["records"]], dtype=object),
         np.array([r["lhs"] for r in report["records"]]),
         np.array([r["rhs"] for r in report["records"]]),
         np.array([int(r["holds"]) for r in report["records"]])],
    )
    summary = {k: report[k] for k in ("instances", "seed", "violations")}
    _emit(summary)
    return 0


def _cmd_dyson(args) -> int:
    out = _out_dir(args)
    if args.profile:
        S = serialize.read_matrix(args.profile)
    else:
        m, n = args.homogeneous
        S = np.full((m, n), 1.0 / max(m, n))
    grid = np.linspace(args.grid_max / args.grid_points, args.grid_max, args.grid_points)
    ladder = None
    if args.eta_ladder:
        ladder = tuple(float(v) for v in args.eta_ladder.split(","))
    sol = solve_dyson(S, grid=grid, eta_ladder=ladder, tol=args.tol, max_iter=args.max_iter)
    serialize.write_columns_csv(out / "dyson_density.csv", ["tau", "density"],
                                [sol.grid, sol.density])
    payload = {"atom": sol.atom, "mass": sol.mass(), "converged": sol.converged,
               "eta_final": sol.eta_final, "shape": list(sol.shape)}
    serialize.write_json(out / "dyson.json", payload)
    _emit(payload)
    return 0 if sol.converged else 2


def _cmd_esd(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args.config, seed_override=args.seed)
    report = run_esd_experiment(cfg, dyson_tol=args.tol)
    if not report.get("scalable", True):
        serialize.write_json(out / "esd_summary.json", report)
        _emit(report)
        return 2
    serialize.write_columns_csv(out / "eigenvalues.csv", ["index", "lambda"],
                                [np.arange(1, report["eigenvalues"].size + 1),
                                 np.sort(report["eigenvalues"])])
    serialize.write_columns_csv(out / "histogram.csv",
                                ["bin_left", "bin_right", "density", "predicted"],
                                [report["hist_edges"][:-1], report["hist_edges"][1:],
                                 report["hist_density"], report["pred_bin_density"]])
    serialize.write_columns_csv(out / "dyson_density.csv", ["tau", "density"],
                                [report["dyson_grid"], report["dyson_density"]])
    serialize.write_columns_csv(out / "singular_density.csv", ["s", "density"],
                                [report["singular_grid"], report["singular_density"]])
    serialize.write_json(out / "rigidity.json",
                         {"rigidity": report["rigidity"],
                          "rigidity_tight": report["rigidity_tight"]})
    summary = {k: report[k] for k in
               ("m", "n", "dyson_converged", "dyson_mass", "atom", "ks_vs_mp",
                "sup_density_vs_mp", "l1_hist_vs_dyson", "rigidity", "rigidity_tight")}
    serialize.write_json(out / "esd_summary.json", summary)
    _emit(summary)
    return 0 if report["dyson_converged"] else 2


def _cmd_clt(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args.config, seed_override=args.seed)
    sweep = tuple(int(v) for v in args.m_sweep.split(",")) if args.m_sweep else ()
    report = run_clt_experiment(cfg, M=args.M, replicates=args.replicates,
                                m_sweep=sweep, sweep_replicates=args.sweep_replicates)
    serialize.write_json(out / "clt_report.json", report)
    _emit({k: report[k] for k in ("m", "n", "M", "replicates", "failures",
                                  "rel_frobenius_error", "max_gauge_residual")}
          | ({"m_sweep": report["m_sweep"]} if "m_sweep" in report else {}))
    return 0


def _cmd_concentration(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args.config, seed_override=args.seed, trials_override=args.trials)
    report = run_concentration_experiment(cfg, D=args.D)
    rows = report["rows"]
    serialize.write_columns_csv(
        out / "concentration_trials.csv",
        ["trial", "gauge_distance", "E1", "spectral_deviation", "E2",
         "l1_deviation", "E3", "noise_norm", "noise_within_tD"],
        [np.array([r["trial"] for r in rows]),
         np.array([r["gauge_distance"] for r in rows]),
         np.array([int(r["E1"]) for r in rows]),
         np.array([r["spectral_deviation"] for r in rows]),
         np.array([int(r["E2"]) for r in rows]),
         np.array([r["l1_deviation"] for r in rows]),
         np.array([int(r["E3"]) for r in rows]),
         np.array([r["noise_norm"] for r in rows]),
         np.array([int(r["noise_within_tD"]) for r in rows])],
    )
    serialize.write_json(out / "concentration_report.json", report)
    _emit({k: report[k] for k in
           ("m", "n", "trials", "scalability_failures", "median_gauge_distance",
            "freq_E1", "freq_E2", "freq_E3", "eps0_condition_met")})
    return 0


def _cmd_limit(args) -> int:
    out = _out_dir(args)
    spec = LimitSequenceSpec(levels=tuple(int(v) for v in args.levels.split(",")),
                             ref_level=args.ref_level, ramp_slope=args.ramp_slope,
                             cost_strength=args.cost_strength)
    report = run_deterministic_limit_experiment(spec)
    serialize.write_json(out / "limit_report.json", report)
    _emit(report)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sinkbridge",
                                description="Matrix scaling, stability constants, and "
                                            "spectral experiments")
    p.add_argument("--version", action="version", version=f"sinkbridge {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out-dir", default=None, help="output directory "
                        "(default: $SB_OUTPUT_DIR or '.')")
        sp.add_argument("--seed", type=int, default=None,
                        help="seed override (default 0 / config value)")
        sp.add_argument("--workers", type=int, default=1,
                        help="worker count for Monte Carlo loops (reports are "
                             "identical for any value; default 1)")

    sp = sub.add_parser("scale", help="Sinkhorn-scale a matrix to margins")
    sp.add_argument("--matrix", required=True)
    sp.add_argument("--margins", required=True)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--max-iter", type=int, default=100_000)
    sp.add_argument("--gauge", default=Gauge.BETA_C_WEIGHTED.value,
                    choices=[g.value for g in Gauge])
    common(sp)
    sp.set_defaults(fn=_cmd_scale)

    sp = sub.add_parser("check", help="Menon-Schneider scalability verdict")
    sp.add_argument("--matrix", required=True)
    sp.add_argument("--margins", required=True)
    sp.add_argument("--exact", action="store_true", help="force exact subset mode")
    common(sp)
    sp.set_defaults(fn=_cmd_check)

    sp = sub.add_parser("constants", help="evaluate stability/concentration constants")
    sp.add_argument("--matrix")
    sp.add_argument("--margins")
    sp.add_argument("--config", help="experiment config JSON instead of files")
    sp.add_argument("--sigma", type=float, default=None)
    sp.add_argument("--R", type=float, default=None)
    sp.add_argument("--D", type=float, default=1.0)
    sp.add_argument("--dist", choices=[k.value for k in EntryKind], default=None)
    common(sp)
    sp.set_defaults(fn=_cmd_constants)

    sp = sub.add_parser("stability-sweep", help="Monte Carlo stability inequality suite")
    sp.add_argument("--instances", type=int, default=1000)
    common(sp)
    sp.set_defaults(fn=_cmd_stability_sweep)

    sp = sub.add_parser("dyson", help="solve the Dyson equation for a variance profile")
    sp.add_argument("--profile", help="variance profile CSV")
    sp.add_argument("--homogeneous", nargs=2, type=int, metavar=("M", "N"),
                    help="flat profile of the given shape instead of a file")
    sp.add_argument("--grid-points", type=int, default=400)
    sp.add_argument("--grid-max", type=float, default=4.2)
    sp.add_argument("--eta-ladder", default=None, help="comma-separated decreasing etas")
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("--max-iter", type=int, default=5000)
    common(sp)
    sp.set_defaults(fn=_cmd_dyson)

    sp = sub.add_parser("esd", help="empirical spectral distribution experiment")
    sp.add_argument("--config", required=True)
    sp.add_argument("--tol", type=float, default=1e-9, help="Dyson solver tolerance")
    common(sp)
    sp.set_defaults(fn=_cmd_esd)

    sp = sub.add_parser("clt", help="empirical-potential CLT experiment")
    sp.add_argument("--config", required=True)
    sp.add_argument("--M", type=int, default=20_000)
    sp.add_argument("--replicates", type=int, default=500)
    sp.add_argument("--m-sweep", default=None, help="comma-separated M checkpoints")
    sp.add_argument("--sweep-replicates", type=int, default=300)
    common(sp)
    sp.set_defaults(fn=_cmd_clt)

    sp = sub.add_parser("concentration", help="potential concentration experiment")
    sp.add_argument("--config", required=True)
    sp.add_argument("--D", type=float, default=1.0)
    sp.add_argument("--trials", type=int, default=None)
    common(sp)
    sp.set_defaults(fn=_cmd_concentration)

    sp = sub.add_parser("limit", help="deterministic scaling-limit experiment")
    sp.add_argument("--levels", default="3,4,5,6")
    sp.add_argument("--ref-level", type=int, default=8)
    sp.add_argument("--ramp-slope", type=float, default=1.0)
    sp.add_argument("--cost-strength", type=float, default=1.0)
    common(sp)
    sp.set_defaults(fn=_cmd_limit)

    return p


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (MaxIterationsError, EigensolverFailure, LeftHalfPlane) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr, indent=2)
        sys.stderr.write("\n")
        return 2
    except (SinkbridgeError, FileNotFoundError, ValueError, KeyError,
            json.JSONDecodeError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr, indent=2)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
