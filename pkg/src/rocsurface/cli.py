"""Command-line front end.

Subcommands: ``tcf`` (point estimates with standard errors and Wald
intervals at given cut pairs), ``surface`` (plot-ready TCF grid),
``curve`` (two-class projections), ``vus`` (volume under the surface with
uncertainty), ``simulate`` (Monte Carlo studies) and ``validate``
(dataset and working-model diagnostics without estimating).

Exit codes: 0 on success, 2 for usage or data validation problems, 3 for
numerical failures.  JSON is the canonical output format; floats are
serialised with 17 significant digits so identical inputs and seeds give
byte-identical reports.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .asymptotics import (confidence_region, estimate_tcf_with_sd, tcf_covariance,
                          wald_intervals)
from .data import CutPair, Dataset, load_csv, verification_rate
from .exceptions import DataError, EstimationError, RocSurfaceError
from . import glm
from .resampling import BootstrapPlan, bootstrap
from .simlab import StudyConfig, run_monte_carlo
from .tcf import Method, default_grid, estimate_tcf, prepare_fits, roc_projection, roc_surface
from .vus import vus_with_sd

CI_LEVEL = 0.95


# ---------------------------------------------------------------------------
# deterministic serialisation
# ---------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if x != x:
        return "NaN"
    if x == float("inf"):
        return "Infinity"
    if x == float("-inf"):
        return "-Infinity"
    return format(x, ".17g")


def dumps_17g(obj, indent: int = 0) -> str:
    """JSON text with floats at 17 significant digits (deterministic)."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  "{k}": {dumps_17g(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        flat = all(isinstance(v, (int, float, str, bool, type(None))) for v in obj)
        if flat:
            return "[" + ", ".join(dumps_17g(v) for v in obj) + "]"
        items = [f"{pad}  " + dumps_17g(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, np.ndarray):
        return dumps_17g(obj.tolist(), indent)
    if isinstance(obj, str):
        return '"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise TypeError(f"cannot serialise {type(obj)!r}")


def _emit(args, payload: dict, csv_rows: tuple[list, list] | None = None) -> None:
    """Write the report as JSON (canonical) or CSV (grids/tables)."""
    if args.format == "csv" and csv_rows is not None:
        header, rows = csv_rows
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(
                _fmt_float(x) if isinstance(x, float) else str(x) for x in row))
        text = "\n".join(lines) + "\n"
    else:
        text = dumps_17g(payload) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _parse_cut(text: str) -> CutPair:
    try:
        lo, hi = text.split(",")
        return CutPair(float(lo), float(hi))
    except (ValueError, DataError) as exc:
        raise argparse.ArgumentTypeError(
            f"--cut expects 'c1,c2' with c1 < c2, got '{text}': {exc}") from None


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("ROC_SURFACE_THREADS")
    return int(env) if env else 1


def _add_common(p: argparse.ArgumentParser, with_method=True):
    if with_method:
        p.add_argument("--method", default="all",
                       choices=["full", "fi", "msi", "ipw", "spe", "all"])
    p.add_argument("--link", default="logit", choices=["logit", "probit"])
    p.add_argument("--boot", type=int, default=0, metavar="B")
    p.add_argument("--seed", type=int, default=0, metavar="S")
    p.add_argument("--out", "-o", default=None, metavar="PATH")
    p.add_argument("--format", default="json", choices=["json", "csv"])
    p.add_argument("--threads", type=int, default=None, metavar="K")
    p.add_argument("data", nargs="?", help="input CSV (columns t, a1..ap, v, d)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rocsurface",
        description="Bias-corrected ROC surface and VUS estimation for "
                    "three-class tests with partially verified disease status.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tcf", help="TCF estimates at cut pairs")
    p.add_argument("--cut", action="append", type=_parse_cut, required=True,
                   metavar="C1,C2")
    _add_common(p)

    p = sub.add_parser("surface", help="TCF triple over a cut-pair grid")
    p.add_argument("--grid", default="quantiles:99", metavar="SPEC",
                   help="'quantiles:K' or 'values:v1,v2,...'")
    p.add_argument("--sd", action="store_true", help="attach asymptotic sds (slow)")
    _add_common(p)

    p = sub.add_parser("curve", help="two-class ROC curve projection")
    p.add_argument("--pair", default="12", choices=["12", "23", "13"])
    _add_common(p)

    p = sub.add_parser("vus", help="volume under the ROC surface")
    _add_common(p)

    p = sub.add_parser("simulate", help="run a Monte Carlo study")
    p.add_argument("--study", required=True,
                   choices=["s1", "s2", "s3", "s4", "vus1", "vus2", "vus3"])
    p.add_argument("--lambda", dest="lambda_index", type=int, default=1,
                   choices=[1, 2, 3])
    p.add_argument("--n", type=int, default=250)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--boot", type=int, default=0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", "-o", default=None)
    p.add_argument("--format", default="csv", choices=["json", "csv"])
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("validate", help="dataset and working-model diagnostics")
    _add_common(p, with_method=False)
    return parser


def _load(args) -> Dataset:
    if not args.data:
        raise DataError("an input CSV is required")
    return load_csv(args.data)


def _resolve_methods(requested: str, ds: Dataset) -> tuple[list[Method], list[dict]]:
    """Expand --method, dropping (with reasons) methods the data cannot support."""
    order = [Method.FULL, Method.FI, Method.MSI, Method.IPW, Method.SPE]
    wanted = order if requested == "all" else [Method(requested)]
    rate = verification_rate(ds)
    counts = ds.verified_class_counts()
    chosen, skipped = [], []

    def skip(m, reason):
        if requested == "all":
            skipped.append({"method": m.value, "reason": reason})
        else:
            raise DataError(f"method {m.value}: {reason}")

    for m in wanted:
        if m is Method.FULL and rate < 1.0:
            skip(m, "FULL requires complete verification")
            continue
        if m.needs_rho and np.any(counts == 0):
            k = int(np.argmin(counts)) + 1
            skip(m, f"class {k} never verified; cannot fit the disease model")
            continue
        if m.needs_pi and (rate == 0.0 or rate == 1.0):
            skip(m, "verification model needs both verified and unverified subjects")
            continue
        chosen.append(m)
    if not chosen:
        raise DataError("no requested method is computable on this dataset")
    return chosen, skipped


def _boot_sd(args, ds, method, statistic, cut=None):
    if not args.boot:
        return None
    plan = BootstrapPlan(method, statistic, cut, b=args.boot, seed=args.seed,
                         link=args.link)
    return bootstrap(plan, ds, threads=_threads(args)).sd


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_tcf(args) -> None:
    ds = _load(args)
    methods, skipped = _resolve_methods(args.method, ds)
    results = []
    for method in methods:
        fits = prepare_fits(ds, method, args.link)
        for cut in args.cut:
            est = estimate_tcf_with_sd(method, ds, cut, fits)
            ci = wald_intervals(est.tcf, est.asy_sd, CI_LEVEL)
            boot_sd = _boot_sd(args, ds, method, "tcf", cut)
            ellipse = confidence_region(est.cov[:2, :2], est.tcf[:2], CI_LEVEL)
            entry = {
                "method": method.value,
                "cut": [cut.c1, cut.c2],
                "tcf": est.tcf,
                "asy_sd": est.asy_sd,
                "ci_level": CI_LEVEL,
                "ci": ci,
                "ellipse_pair_12": ellipse.polygon(100),
            }
            if boot_sd is not None:
                entry["boot_sd"] = boot_sd
            results.append(entry)
    _emit(args, {"command": "tcf", "results": results, "skipped": skipped})


def _grid_from_spec(spec: str, ds: Dataset):
    kind, _, rest = spec.partition(":")
    if kind == "quantiles":
        k = int(rest) if rest else 99
        levels = np.linspace(0.01, 0.99, k)
        return default_grid(ds, levels)
    if kind == "values":
        vals = sorted({float(x) for x in rest.split(",")})
        return [CutPair(a, b) for i, a in enumerate(vals) for b in vals[i + 1:]]
    raise DataError(f"unknown grid spec '{spec}'")


def _cmd_surface(args) -> None:
    ds = _load(args)
    methods, skipped = _resolve_methods(args.method, ds)
    grid = _grid_from_spec(args.grid, ds)
    results = []
    header = ["method", "c1", "c2", "tcf1", "tcf2", "tcf3"]
    if args.sd:
        header += ["sd1", "sd2", "sd3"]
    rows = []
    for method in methods:
        fits = prepare_fits(ds, method, args.link)
        points = roc_surface(method, ds, grid, fits.rho, fits.pi)
        entries = []
        for pt in points:
            entry = {"cut": [pt.cut.c1, pt.cut.c2], "tcf": pt.tcf}
            row = [method.value, pt.cut.c1, pt.cut.c2, *map(float, pt.tcf)]
            if pt.note:
                entry["note"] = pt.note
            if args.sd and pt.note is None:
                _, sd = tcf_covariance(method, ds, pt.cut, fits)
                entry["asy_sd"] = sd
                row += list(map(float, sd))
            entries.append(entry)
            rows.append(row)
        results.append({"method": method.value, "points": entries})
    _emit(args, {"command": "surface", "results": results, "skipped": skipped},
          (header, rows))


def _cmd_curve(args) -> None:
    ds = _load(args)
    methods, skipped = _resolve_methods(args.method, ds)
    pair = (int(args.pair[0]), int(args.pair[1]))
    results = []
    rows = []
    for method in methods:
        fits = prepare_fits(ds, method, args.link)
        curve = roc_projection(method, ds, pair, rho=fits.rho, pi=fits.pi)
        results.append({"method": method.value,
                        "class_pair": list(pair),
                        "cuts": curve.cuts,
                        "points": curve.points})
        for c, (x, y) in zip(curve.cuts, curve.points):
            rows.append([method.value, float(c), float(x), float(y)])
    _emit(args, {"command": "curve", "results": results, "skipped": skipped},
          (["method", "cut", "x", "y"], rows))


def _cmd_vus(args) -> None:
    ds = _load(args)
    methods, skipped = _resolve_methods(args.method, ds)
    results = []
    rows = []
    for method in methods:
        fits = prepare_fits(ds, method, args.link)
        est = vus_with_sd(method, ds, fits)
        ci = wald_intervals([est.mu], [est.asy_sd], CI_LEVEL)[0]
        boot_sd = _boot_sd(args, ds, method, "vus")
        entry = {"method": method.value, "estimate": est.mu,
                 "asy_sd": est.asy_sd, "ci_level": CI_LEVEL, "ci": ci}
        if boot_sd is not None:
            entry["boot_sd"] = float(boot_sd[0])
        results.append(entry)
        rows.append([method.value, est.mu, est.asy_sd,
                     float(boot_sd[0]) if boot_sd is not None else "",
                     float(ci[0]), float(ci[1])])
    _emit(args, {"command": "vus", "results": results, "skipped": skipped},
          (["method", "estimate", "asy_sd", "boot_sd", "ci_low", "ci_high"], rows))


def _cmd_simulate(args) -> None:
    config = StudyConfig(study=args.study, n=args.n, reps=args.reps,
                         seed=args.seed, lambda_index=args.lambda_index,
                         boot=args.boot)
    report = run_monte_carlo(config)
    if args.out and args.format == "csv":
        report.to_csv(args.out)
        print(f"wrote {args.out}")
        return
    payload = {
        "command": "simulate",
        "study": config.study,
        "n": config.n,
        "reps": report.reps_done,
        "failures": [list(f) for f in report.failures],
        "cells": [{
            "method": c.method.value,
            "cut": None if c.cut is None else [c.cut.c1, c.cut.c2],
            "true": c.true,
            "mean": c.mean,
            "mc_sd": c.mc_sd,
            "asy_sd": c.asy_sd,
            "boot_sd": c.boot_sd,
        } for c in report.cells],
    }
    _emit(args, payload)


def _cmd_validate(args) -> None:
    ds = _load(args)
    counts = ds.verified_class_counts()
    report = {
        "command": "validate",
        "n": ds.n,
        "covariates": ds.p,
        "verification_rate": verification_rate(ds),
        "verified_class_counts": counts.tolist(),
    }
    if np.all(counts > 0):
        try:
            fit = glm.fit_disease(ds)
            probs = glm.predict(fit, ds)
            report["disease_model"] = {**fit.to_json_dict(),
                                       "clipped_probabilities": probs.n_clipped}
        except RocSurfaceError as exc:
            report["disease_model"] = {"error": str(exc)}
    else:
        report["disease_model"] = {"error": "some class never verified"}
    if 0.0 < verification_rate(ds) < 1.0:
        try:
            fit = glm.fit_verification(ds, args.link)
            probs = glm.predict(fit, ds)
            report["verification_model"] = {**fit.to_json_dict(),
                                            "clipped_probabilities": probs.n_clipped}
        except RocSurfaceError as exc:
            report["verification_model"] = {"error": str(exc)}
    else:
        report["verification_model"] = {"error": "verification flag is constant"}
    _emit(args, report)


_COMMANDS = {
    "tcf": _cmd_tcf,
    "surface": _cmd_surface,
    "curve": _cmd_curve,
    "vus": _cmd_vus,
    "simulate": _cmd_simulate,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _COMMANDS[args.command](args)
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EstimationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
