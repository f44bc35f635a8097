"""Command-line front end: estimate, simulate, compare.

Exit codes: 0 success, 1 I/O or usage error, 2 no MLE exists (the
witness point is reported), 3 the EM loop hit its iteration cap.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from .data import GridPolicy, NoMleError, compute_tau_grid, load_dataset
from .density import LogConcaveFit, cdf_at, density_at, save_fit
from .em import EmConfig, estimate
from .simulate import (
    gamma_cure_scenario,
    gamma_interval_scenario,
    run_study,
    write_per_rep_csv,
    write_summary_json,
)
from .turnbull import sup_distance, turnbull

CURVE_POINTS = 512


def build_curve(fit: LogConcaveFit, lo: float, hi: float) -> dict:
    """Density/cdf/survival sampled on an even grid plus the fit knots."""
    x = np.unique(np.concatenate([np.linspace(lo, hi, CURVE_POINTS), fit.grid.knots]))
    dens = np.asarray(density_at(fit, x))
    cdf = np.asarray(cdf_at(fit, x))
    return {
        "x": x,
        "density": dens,
        "cdf": cdf,
        "survival": 1.0 - cdf,
        "knots": fit.grid.knots,
        "q": fit.q,
    }


def _write_curve_csv(curve: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "density", "cdf", "survival"])
        for row in zip(curve["x"], curve["density"], curve["cdf"], curve["survival"]):
            wr.writerow([repr(float(v)) for v in row])


def _curve_range(d) -> tuple[float, float]:
    tg = compute_tau_grid(d)
    span = tg.taus[-1] - tg.taus[0]
    pad = 0.05 * span if span > 0 else 1.0
    return tg.taus[0] - pad, tg.taus[-1] + pad


def _config_from_args(args, allow_cure: bool) -> EmConfig:
    policy = GridPolicy(max_spacing=getattr(args, "grid_max_spacing", None))
    return EmConfig(
        allow_cure=allow_cure,
        l1_tol=getattr(args, "l1_tol", 1e-6),
        eps1=getattr(args, "eps1", 0.0),
        eps2=getattr(args, "eps2", 0.0),
        domain_reduction=not getattr(args, "no_domain_reduction", False),
        grid_policy=policy,
    )


def cmd_estimate(args) -> int:
    try:
        d = load_dataset(args.input, args.format)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    cfg = _config_from_args(args, allow_cure=args.cure == "on")
    try:
        fit, state = estimate(d, cfg, verbose=args.verbose)
    except NoMleError as exc:
        print(f"no MLE exists: witness point {exc.witness}", file=sys.stderr)
        return 2
    try:
        save_fit(fit, args.out)
        if args.curve:
            lo, hi = _curve_range(d)
            _write_curve_csv(build_curve(fit, lo, hi), args.curve)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not state.converged:
        print(
            f"did not converge in {state.iterations} iterations (last l1 bound {state.last_l1:.3e})",
            file=sys.stderr,
        )
        return 3
    return 0


def cmd_simulate(args) -> int:
    if args.scenario == "gamma-interval":
        scenario = gamma_interval_scenario(args.n, args.reps, args.seed)
        cfg = EmConfig(allow_cure=False)
    else:
        scenario = gamma_cure_scenario(args.n, args.reps, args.seed)
        cfg = EmConfig(allow_cure=True)
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        summary = run_study(scenario, cfg, threads=args.threads)
        write_per_rep_csv(summary, os.path.join(args.out_dir, "replications.csv"))
        write_summary_json(summary, os.path.join(args.out_dir, "summary.json"))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"mean sup|S_hat - S| = {summary.mean_sup_S:.4f} (comparator {summary.comparator_mean_sup_S:.4f}); "
        f"mean |q_hat - q| = {summary.mean_abs_q_err:.4f} (comparator {summary.comparator_mean_abs_q_err:.4f})"
    )
    return 0


def cmd_compare(args) -> int:
    try:
        d = load_dataset(args.input, args.format)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    cfg = _config_from_args(args, allow_cure=args.cure == "on")
    try:
        fit, state = estimate(d, cfg)
    except NoMleError as exc:
        print(f"no MLE exists: witness point {exc.witness}", file=sys.stderr)
        return 2
    tb = turnbull(d)
    lo, hi = _curve_range(d)
    curve = build_curve(fit, lo, hi)
    xs = np.unique(np.concatenate([curve["x"], tb.jump_points]))
    delta = sup_distance(tb, lambda x: np.interp(x, curve["x"], curve["survival"]) , xs)
    try:
        os.makedirs(args.out, exist_ok=True)
        save_fit(fit, os.path.join(args.out, "fit.json"))
        tb.save(os.path.join(args.out, "turnbull.json"))
        _write_curve_csv(curve, os.path.join(args.out, "lc_curve.csv"))
        with open(os.path.join(args.out, "turnbull_curve.csv"), "w", encoding="utf-8", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "survival"])
            for x, s in zip(tb.jump_points, tb.levels):
                wr.writerow([repr(float(x)), repr(float(s))])
        with open(os.path.join(args.out, "compare.json"), "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "sup_survival_distance": float(delta),
                    "q_logconcave": fit.q,
                    "q_turnbull": tb.mass_at_infinity,
                    "q_difference": abs(fit.q - tb.mass_at_infinity),
                },
                fh,
                indent=2,
            )
            fh.write("\n")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"sup survival distance = {delta:.4f}; q (log-concave) = {fit.q:.4f}; "
        f"q (Turnbull) = {tb.mass_at_infinity:.4f}"
    )
    return 0 if state.converged else 3


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lcsurv", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("estimate", help="fit the log-concave MLE to a data file")
    pe.add_argument("--input", required=True)
    pe.add_argument("--format", choices=["csv", "survival-csv"], default="csv")
    pe.add_argument("--cure", choices=["on", "off"], default="off")
    pe.add_argument("--out", required=True, help="output fit JSON path")
    pe.add_argument("--curve", help="optional curve CSV path")
    pe.add_argument("--l1-tol", dest="l1_tol", type=float, default=1e-6)
    pe.add_argument("--eps1", type=float, default=0.0)
    pe.add_argument("--eps2", type=float, default=0.0)
    pe.add_argument("--no-domain-reduction", dest="no_domain_reduction", action="store_true")
    pe.add_argument("--grid-max-spacing", dest="grid_max_spacing", type=float)
    pe.add_argument("--verbose", action="store_true")
    pe.set_defaults(func=cmd_estimate)

    ps = sub.add_parser("simulate", help="run a replication study")
    ps.add_argument("--scenario", choices=["gamma-interval", "gamma-cure"], required=True)
    ps.add_argument("--n", type=int, default=100)
    ps.add_argument("--reps", type=int, default=500)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out-dir", dest="out_dir", required=True)
    ps.add_argument("--threads", type=int, default=1)
    ps.set_defaults(func=cmd_simulate)

    pc = sub.add_parser("compare", help="log-concave MLE versus Turnbull on one dataset")
    pc.add_argument("--input", required=True)
    pc.add_argument("--format", choices=["csv", "survival-csv"], default="csv")
    pc.add_argument("--cure", choices=["on", "off"], default="on")
    pc.add_argument("--out", required=True, help="output directory")
    pc.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return args.func(args)


def entry() -> None:
    sys.exit(main())
