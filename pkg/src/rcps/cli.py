"""Command-line front end: ``rcps {fit,confint,pql,simulate}``.

Every artifact starts with a header recording the tool version, the seed and
the fully resolved configuration.  CSV files carry it as a ``#`` comment on
the first line, JSON files as a top-level ``header`` object.  No timestamps
are written, so reruns with the same inputs are byte-identical.
"""

import argparse
import csv
import json
import logging
import math
import re
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, ConvergenceError, DataError, GamError
from .family import get_family
from .fit import fit_rcps, gcv_select, make_spec
from .inference import (
    PILOT_LAMBDA_GRID, confidence_interval, default_grid, partial_residuals, pilot_fit,
)
from .mixed import MixedSpec, pql_fit
from .sim import SimConfig, run_monte_carlo

logger = logging.getLogger("rcps")

GCV_KNOTS = (5, 8, 10, 15, 20)
GCV_LAMBDAS = tuple(PILOT_LAMBDA_GRID.tolist())
EXIT_OK = 0


# ---------------------------------------------------------------- input

def read_table(path, response, covariates):
    """Read ``response`` and ``covariates`` columns from a headed CSV file.

    Returns ``(X, y)`` as float arrays.  Any missing column, empty body or
    non-numeric cell raises :class:`DataError` naming the row and column.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: empty file, a header row is required")
        header = [h.strip() for h in header]
        wanted = [response, *covariates]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}; have {', '.join(header)}")
        idx = [header.index(c) for c in wanted]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            vals = []
            for name, i in zip(wanted, idx):
                cell = row[i].strip() if i < len(row) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {lineno}, column {name!r}: "
                                    f"not a number ({cell!r})") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {lineno}, column {name!r}: non-finite value")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.array(rows, dtype=float)
    return data[:, 1:], data[:, 0]


# ---------------------------------------------------------------- output

def _header(args, extra=None):
    config = {k: v for k, v in sorted(vars(args).items())
              if k not in {"func", "threads", "verbose"}}
    if extra:
        config["resolved"] = extra
    return {"tool": "rcps", "version": __version__,
            "seed": getattr(args, "seed", None), "config": config}


def write_json(path, header, payload):
    body = {"header": header, **payload}
    path.write_text(json.dumps(body, sort_keys=True, indent=1, default=_jsonable) + "\n",
                    encoding="utf-8")


def write_csv(path, header, columns):
    names = list(columns)
    cols = [np.asarray(columns[c]) for c in names]
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True, default=_jsonable) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _slug(name):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name) or "x"


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- parsing

def _covariate_list(text):
    cols = [c.strip() for c in text.split(",") if c.strip()]
    if not cols:
        raise argparse.ArgumentTypeError("need at least one covariate")
    return cols


def _knots(text):
    if text.lower() == "gcv":
        return "gcv"
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--knots takes an integer or 'gcv', got {text!r}") from None
    if k < 1:
        raise argparse.ArgumentTypeError("--knots must be >= 1")
    return k


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _lambdas(text):
    if text.lower() == "gcv":
        return "gcv"
    return _float_list(text)


def _sigma2(text):
    if text.strip().lower() in {"reml", "ml", "estimate", "auto"}:
        return text.strip().lower()
    return _float_list(text)


def _per_covariate(values, D, what):
    if len(values) == 1:
        return tuple(values) * D
    if len(values) != D:
        raise ConfigurationError(f"{what}: need 1 or {D} values, got {len(values)}")
    return tuple(values)


def _family(args):
    kw = {"shape": args.gamma_shape} if args.family == "gamma" else {}
    return get_family(args.family, **kw)


def _resolve_spec(args, X, y):
    """Fixed spec from the flags, or the GCV-best candidate when asked."""
    family = _family(args)
    D = X.shape[1]
    if args.knots != "gcv" and args.lambda_ != "gcv":
        lams = _per_covariate(args.lambda_, D, "--lambda")
        return make_spec(family, D, degree=args.degree, knot_count=args.knots,
                         penalty_order=args.penalty_order, lambdas=lams, ridge=args.ridge)
    n = X.shape[0]
    if args.knots == "gcv":
        knots = [K for K in GCV_KNOTS if D * (K + args.degree) < n
                 and args.penalty_order < K + args.degree]
        if not knots:
            raise ConfigurationError(f"no knot candidate fits n={n} with {D} covariates")
    else:
        knots = [args.knots]
    if args.lambda_ == "gcv":
        grid = GCV_LAMBDAS
    else:
        grid = _per_covariate(args.lambda_, D, "--lambda")
        grid = [[v] for v in grid]
    return gcv_select(X, y, family, knots, grid, degree=args.degree,
                      penalty_order=args.penalty_order, ridge=args.ridge,
                      shared_lambda=args.lambda_ == "gcv")


# ---------------------------------------------------------------- commands

def _fit_model(args):
    X, y = read_table(args.input, args.response, args.covariates)
    spec = _resolve_spec(args, X, y)
    fit = fit_rcps(spec, X, y)
    return X, y, spec, fit


def _write_curves(out, header, fit, names, grid_size, prefix="curve"):
    for j, name in enumerate(names):
        u = default_grid(fit.spec.bases[j], grid_size)
        write_csv(out / f"{prefix}_{_slug(name)}.csv", header, {
            "x": fit.normalizers[j].inverse(u), "u": u, "eta_hat": fit.component_unit(j, u),
        })


def cmd_fit(args):
    _, _, spec, fit = _fit_model(args)
    out = _out_dir(args)
    header = _header(args, spec.to_dict())
    summary = fit.summary()
    summary["covariates"] = args.covariates
    write_json(out / "fit_summary.json", header, {"fit": summary})
    _write_curves(out, header, fit, args.covariates, args.grid_size)
    print(f"fit: {len(args.covariates)} component(s), edf={fit.edf:.3f}, "
          f"gcv={fit.gcv:.6g}, iterations={fit.n_iter}")
    return EXIT_OK


def cmd_confint(args):
    if not 0 < args.alpha < 1:
        raise ConfigurationError(f"--alpha must lie in (0, 1), got {args.alpha}")
    _, _, spec, fit = _fit_model(args)
    out = _out_dir(args)
    header = _header(args, spec.to_dict())
    pilot = pilot_fit(fit)
    for j, name in enumerate(args.covariates):
        u = default_grid(fit.spec.bases[j], args.grid_size)
        band = confidence_interval(fit, j, grid=u, alpha=args.alpha, pilot=pilot)
        cols = band.as_columns()
        cols.pop("u")
        write_csv(out / f"band_{_slug(name)}.csv", header, cols)
        write_csv(out / f"residuals_{_slug(name)}.csv", header, {
            "x": fit.normalizers[j].inverse(fit.unit_x[:, j]),
            "partial_residual": partial_residuals(fit, j),
        })
    summary = fit.summary()
    summary["covariates"] = args.covariates
    summary["pilot_lambda"] = pilot.spec.penalty.lambdas[0]
    write_json(out / "fit_summary.json", header, {"fit": summary})
    print(f"confint: alpha={args.alpha}, {len(args.covariates)} band(s) written to {out}")
    return EXIT_OK


def cmd_pql(args):
    if args.sigma2 is None:
        raise ConfigurationError("pql needs --sigma2 (one value or one per covariate)")
    if isinstance(args.sigma2, str):
        raise ConfigurationError(
            f"--sigma2 {args.sigma2}: variance-component estimation is out of scope; "
            "supply numeric values")
    if args.knots == "gcv":
        raise ConfigurationError("pql needs an integer --knots")
    X, y = read_table(args.input, args.response, args.covariates)
    D = X.shape[1]
    mspec = MixedSpec(_family(args), _per_covariate(args.sigma2, D, "--sigma2"),
                      degree=args.degree, knot_count=args.knots, ridge_tilde=args.ridge)
    pfit = pql_fit(mspec, X, y)
    out = _out_dir(args)
    header = _header(args, mspec.to_gam_spec().to_dict())
    summary = pfit.summary()
    summary["covariates"] = args.covariates
    write_json(out / "pql_summary.json", header, {"fit": summary})
    _write_curves(out, header, pfit.gam, args.covariates, args.grid_size)
    print(f"pql: equivalence residual {pfit.equivalence_residual:.3g}")
    return EXIT_OK


def cmd_simulate(args):
    kw = dict(n=args.n, reps=args.reps, rho=args.rho, family=args.family or "bernoulli",
              degree=args.degree, penalty_order=args.penalty_order, ridge=args.ridge,
              seed=args.seed, threads=args.threads)
    if args.knots not in (None, "gcv"):
        kw["knot_count"] = args.knots
    elif args.knots == "gcv":
        raise ConfigurationError("simulate uses the knot rule or an integer --knots, not gcv")
    if args.lambda_ is not None:
        if args.lambda_ == "gcv":
            raise ConfigurationError("simulate takes lambda scales, not gcv")
        kw["lambda_scales"] = _per_covariate(args.lambda_, 3, "--lambda")
    cfg = SimConfig(**kw)
    report = run_monte_carlo(cfg)
    out = _out_dir(args)
    header = {"tool": "rcps", "version": __version__, "seed": cfg.seed, "config": report.config}
    write_json(out / "sim_report.json", header, report.to_json_dict())
    for curve in report.kde:
        c = curve["component"]
        write_csv(out / f"kde_U{c}.csv", header,
                  {"u": curve["grid"], "density": curve["density"], "normal": curve["normal"]})
    for panel in report.kde2d:
        i, j = panel["pair"]
        g = np.asarray(panel["grid"])
        gi, gj = np.meshgrid(g, g, indexing="ij")
        write_csv(out / f"kde2d_U{i}_U{j}.csv", header, {
            f"u{i}": gi.ravel(), f"u{j}": gj.ravel(), "density": np.asarray(panel["density"]).ravel(),
        })
    print(ks_table(report))
    return EXIT_OK


def ks_table(report):
    """Plain-text table of KS distances and pairwise correlations."""
    lines = [f"n={report.config['n']} rho={report.config['rho']} "
             f"reps={report.n_ok} (failed {report.n_failed})",
             "component  KS"]
    lines += [f"U{j + 1:<9d}{ks:.4f}" for j, ks in enumerate(report.ks)]
    lines.append("pair       corr")
    lines += [f"({k})      {v:+.4f}" for k, v in report.corr.items()]
    return "\n".join(lines)


# ---------------------------------------------------------------- entry

def _add_model_flags(p, data=True):
    if data:
        p.add_argument("--input", required=True, help="CSV file with a header row")
        p.add_argument("--response", required=True)
        p.add_argument("--covariates", required=True, type=_covariate_list,
                       help="comma-separated column names")
        p.add_argument("--family", required=True,
                       choices=["gaussian", "bernoulli", "poisson", "gamma"])
    else:
        p.add_argument("--family", choices=["gaussian", "bernoulli", "poisson", "gamma"])
    p.add_argument("--gamma-shape", type=float, default=1.0, help="known gamma shape")
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--penalty-order", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--grid-size", type=int, default=200)


def build_parser():
    parser = argparse.ArgumentParser(prog="rcps", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rcps {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, help_ in [("fit", cmd_fit, "fit a penalized spline GAM"),
                              ("confint", cmd_confint, "fit and export pointwise bands")]:
        p = sub.add_parser(name, help=help_)
        _add_model_flags(p)
        p.add_argument("--knots", type=_knots, default=10, help="integer or 'gcv'")
        p.add_argument("--lambda", dest="lambda_", type=_lambdas, default=[1.0],
                       help="comma list (one per covariate or shared) or 'gcv'")
        p.add_argument("--ridge", type=float, default=1e-6)
        p.add_argument("--alpha", type=float, default=0.05)
        p.set_defaults(func=func)

    p = sub.add_parser("pql", help="mixed-model fit with given variance components")
    _add_model_flags(p)
    p.add_argument("--knots", type=_knots, default=10)
    p.add_argument("--sigma2", type=_sigma2, default=None)
    p.add_argument("--ridge", type=float, default=1e-8)
    p.set_defaults(func=cmd_pql)

    p = sub.add_parser("simulate", help="Monte Carlo study of the standardized statistics")
    _add_model_flags(p, data=False)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--knots", type=_knots, default=None, help="default 2*ceil(n^0.4)")
    p.add_argument("--lambda", dest="lambda_", type=_lambdas, default=None,
                   help="three scales multiplying sqrt(n/K); default 0.1,0.01,1")
    p.add_argument("--ridge", type=float, default=1e-4)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except ConvergenceError as exc:
        print(f"rcps: convergence failure: {exc}", file=sys.stderr)
        if math.isfinite(exc.grad_norm):
            print(f"rcps: last gradient max-norm {exc.grad_norm:.3g}", file=sys.stderr)
        return exc.exit_code
    except GamError as exc:
        print(f"rcps: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
