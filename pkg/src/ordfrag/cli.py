"""Command-line front end: ``ordfrag {fit,compare,diagnose,curves,simulate,analytic}``.

Every file written carries the engine version and a hash of the run
configuration, and identical configurations give byte-identical files.
Exit codes: 0 success, 1 computational failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import AnalyticError, CapacityModel, Psdm, closed_form_curves, sample_damage_states
from .bayes import McmcSettings, Prior, SamplerError, fragility_bands, sample_posterior
from .data import DataError, Dataset, dataset_to_csv, format_float, load_csv, random_im, simulate_dataset
from .diagnostics import (
    DiagnosticError,
    covariate_trend,
    dcheck_to_csv,
    parallel_check,
    qq_reference,
    qq_to_csv,
    residuals_to_csv,
    surrogate_residuals,
    trend_to_csv,
)
from .evaluation import comparison_to_csv, comparison_to_json, dumps, evaluate_catalog, waic_dic
from .mle import FitError, fit_mle, fit_null, info_criteria
from .models import (
    CATALOG,
    ModelError,
    ParamSet,
    category_probs,
    exceedance_probs,
    parse_model,
)

OUTPUT_ENV = "ORDFRAG_OUTPUT_DIR"
DEFAULT_OUTPUT = "ordfrag-out"
FACET_IMS = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2)
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- output plumbing ------------------------------------------------------------


class Run:
    """Collects output files and writes them once the command has finished."""

    def __init__(self, args, config: dict):
        self.out_dir = Path(args.output or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
        self.config = config
        blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
        self.config_hash = hashlib.sha256(blob.encode()).hexdigest()[:16]
        self.files: dict[str, str] = {}
        self.warnings: list[str] = []

    @property
    def meta(self) -> dict:
        return {"engine": "ordfrag", "version": __version__, "config_hash": self.config_hash}

    def csv(self, name: str, body: str):
        self.files[name] = f"# ordfrag {__version__} config={self.config_hash}\n" + body

    def json(self, name: str, obj: dict):
        self.files[name] = dumps({"meta": self.meta, "config": self.config, **obj}) + "\n"

    def flush(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        summary = {"files": sorted(self.files), "warnings": self.warnings}
        self.json("summary.json", summary)
        for name in sorted(self.files):
            with open(self.out_dir / name, "w", encoding="utf-8", newline="") as fh:
                fh.write(self.files[name])


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _input_fingerprint(path) -> str:
    try:
        with open(path, "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest()[:16]
    except OSError:
        return ""


def _models(args) -> list:
    names = []
    for item in args.models.split(","):
        item = item.strip()
        if not item:
            continue
        names.extend(CATALOG if item == "all" else [item])
    specs = []
    for name in names:
        try:
            specs.append(parse_model(name, args.K, args.link, unsafe=args.unsafe))
        except ModelError as exc:
            raise UsageError(f"{exc}. Known models: {', '.join(CATALOG)}") from None
    if not specs:
        raise UsageError(f"no model given. Known models: {', '.join(CATALOG)}")
    return specs


def _mcmc(args) -> McmcSettings:
    return McmcSettings(chains=args.chains, warmup=args.warmup, iters=args.iters, seed=args.seed, thin=args.thin)


def _base_config(args, **extra) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("output", "func")}
    if getattr(args, "input", None):
        cfg["input_sha256"] = _input_fingerprint(args.input)
    cfg.update(extra)
    return cfg


def _load(args) -> Dataset:
    return load_csv(args.input, args.K)


def _parse_grid(text: str) -> np.ndarray:
    """``lo:hi:n`` (log-spaced) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
        if lo <= 0 or hi <= lo or n < 1:
            raise UsageError(f"bad im grid {text!r}")
        return np.exp(np.linspace(np.log(lo), np.log(hi), n))
    vals = np.array([float(v) for v in text.split(",") if v.strip()])
    if vals.size == 0:
        raise UsageError("im grid is empty")
    if np.any(vals <= 0):
        raise UsageError("im grid values must be positive")
    return np.sort(vals)


# -- commands -------------------------------------------------------------------


def cmd_fit(args) -> int:
    specs = _models(args)
    ds = _load(args)
    run = Run(args, _base_config(args))
    failed = False
    for spec in specs:
        tag = spec.name.replace("+", "_")
        try:
            if args.mode == "mle":
                fit = fit_mle(spec, ds, tol=args.tol)
                report = fit.to_dict()
                try:
                    report["criteria"] = info_criteria(fit, fit_null(spec, ds))
                except (FitError, ValueError) as exc:
                    report["criteria"] = None
                    run.warnings.append(f"{spec.name}: null fit failed ({exc})")
                run.warnings.extend(f"{spec.name}: {w}" for w in fit.warnings)
                run.json(f"fit_{tag}.json", {"fit": report})
                run.csv(f"fit_{tag}_table.csv", _rows_csv(
                    ["term", "estimate", "std.error", "z_value", "pr_z"],
                    [[r["term"], r["estimate"], r["std.error"], r["z_value"], r["pr_z"]] for r in fit.table()]))
            else:
                draws = sample_posterior(spec, ds, Prior(), _mcmc(args))
                run.warnings.extend(f"{spec.name}: {w}" for w in draws.warnings)
                run.json(f"posterior_{tag}.json", {
                    "model": spec.name,
                    "summary": draws.summary(),
                    "acceptance": draws.acceptance,
                    "criteria": waic_dic(draws.flat_loglik(), draws),
                })
                run.csv(f"draws_{tag}.csv", _rows_csv(["chain", "iter", "param", "value"], draws.to_rows()))
        except (FitError, SamplerError, ModelError, ValueError, np.linalg.LinAlgError) as exc:
            failed = True
            run.warnings.append(f"{spec.name}: fit failed: {exc}")
            print(f"error: {spec.name}: {exc}", file=sys.stderr)
    run.flush()
    return EXIT_FAIL if failed else EXIT_OK


def cmd_compare(args) -> int:
    specs = _models(args)
    if len(specs) < 2:
        raise UsageError("compare needs at least two models")
    ds = _load(args)
    run = Run(args, _base_config(args))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows, fits = evaluate_catalog(specs, ds, Prior(), _mcmc(args))
    run.warnings.extend(str(w.message) for w in caught)
    for name, (draws, loo) in fits.items():
        run.warnings.extend(f"{name}: {w}" for w in draws.warnings + loo.warnings)
    run.csv("comparison.csv", comparison_to_csv(rows))
    run.json("comparison.json", {
        "rows": comparison_to_json(rows),
        "waic": {name: waic_dic(d.flat_loglik(), d) for name, (d, _) in fits.items()},
    })
    run.flush()
    return EXIT_OK


def cmd_diagnose(args) -> int:
    spec = parse_model(args.model, args.K, args.link)
    if spec.family != "cumulative":
        raise UsageError(f"diagnose works on cumulative-family models only, got {spec.name}")
    ds = _load(args)
    run = Run(args, _base_config(args))
    try:
        fit = fit_mle(spec, ds)
        res = surrogate_residuals(fit, ds, args.seed, args.replicates)
        low, high = (tuple(int(c) for c in part.split(",")) for part in args.split.split(":"))
        check = parallel_check(ds, (low, high), seed=args.seed, mode=args.split_mode, link=args.link)
    except (FitError, DiagnosticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    run.csv("residuals.csv", residuals_to_csv(res, ds))
    run.csv("qq.csv", qq_to_csv(qq_reference(res[0], spec.link)))
    run.csv("trend.csv", trend_to_csv(covariate_trend(res[0], ds, args.bins)))
    run.csv("dcheck.csv", dcheck_to_csv(check))
    run.json("diagnose.json", {"model": spec.name, "parallel_check": check.summary()})
    run.flush()
    return EXIT_OK


def _curve_rows(im, table, offset=1):
    for i, v in enumerate(im):
        for k in range(table.shape[1]):
            yield float(v), k + offset, float(table[i, k])


def cmd_curves(args) -> int:
    spec = parse_model(args.model, args.K, args.link, unsafe=args.unsafe)
    ds = _load(args)
    im = _parse_grid(args.im_grid)
    facets = _parse_grid(args.facets)
    run = Run(args, _base_config(args))
    try:
        if args.mode == "mle":
            fit = fit_mle(spec, ds)
            p = fit.estimates
            exc = exceedance_probs(spec, p, np.log(im), args.convention)
            # drop the trivial column and number rows by the boundary they describe
            exc = exc[:, :-1] if args.convention == "strict" else exc[:, 1:]
            k_offset = 1 if args.convention == "strict" else 2
            run.csv("curves_exceedance.csv", _rows_csv(["im", "k", "exceedance_prob"], _curve_rows(im, exc, k_offset)))
            run.csv("curves_probs.csv", _rows_csv(["im", "k", "category_prob"],
                                                  _curve_rows(im, category_probs(spec, p, np.log(im)))))
            run.csv("facets.csv", _rows_csv(["im", "k", "category_prob"],
                                            _curve_rows(facets, category_probs(spec, p, np.log(facets)))))
            run.json("curves.json", {"model": spec.name, "estimates": p.as_dict(spec), "convention": args.convention})
        else:
            draws = sample_posterior(spec, ds, Prior(), _mcmc(args))
            run.warnings.extend(f"{spec.name}: {w}" for w in draws.warnings)
            bands = fragility_bands(draws, spec, im, args.level, args.convention)
            fb = fragility_bands(draws, spec, facets, args.level, args.convention)
            run.csv("bands_exceedance.csv", _rows_csv(["im", "k", "stat", "value"], bands.rows("exceedance")))
            run.csv("bands_probs.csv", _rows_csv(["im", "k", "stat", "value"], bands.rows("probs")))
            run.csv("facets.csv", _rows_csv(["im", "k", "stat", "value"], fb.rows("probs")))
            run.json("curves.json", {"model": spec.name, "level": args.level, "convention": args.convention,
                                     "posterior": draws.summary(args.level)})
    except (FitError, SamplerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    run.flush()
    return EXIT_OK


def _read_json_arg(text: str) -> dict:
    if os.path.exists(text):
        with open(text, encoding="utf-8") as fh:
            return json.load(fh)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"not a JSON file or literal: {text!r}") from exc


def cmd_simulate(args) -> int:
    spec = parse_model(args.model, args.K, args.link, unsafe=args.unsafe)
    cfg = _read_json_arg(args.params)
    params = ParamSet(np.asarray(cfg["tau"], dtype=float), np.asarray(cfg.get("beta", 0.0), dtype=float),
                      float(cfg.get("gamma", 0.0)))
    im = _parse_grid(args.im_grid) if args.im_grid else None
    if im is None:
        im = random_im(args.seed, args.n, args.im_min, args.im_max)
    ds = simulate_dataset(spec, params, im, args.seed)
    run = Run(args, _base_config(args, params=cfg))
    run.csv(args.name, dataset_to_csv(ds))
    run.flush()
    return EXIT_OK


def cmd_analytic(args) -> int:
    cfg = _read_json_arg(args.config)
    try:
        psdm = Psdm(**cfg["psdm"])
        cap = CapacityModel(np.asarray(cfg["capacity"]["ln_sc"]), np.asarray(cfg["capacity"]["beta_c"]))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"config needs psdm{{ln_a0,a1,beta_d}} and capacity{{ln_sc,beta_c}}: {exc}") from exc
    im = random_im(args.seed, args.n, args.im_min, args.im_max)
    grid = _parse_grid(args.im_grid)
    run = Run(args, _base_config(args, analytic=cfg))
    try:
        ds = sample_damage_states(psdm, cap, im, args.correlation, args.seed)
    except AnalyticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    run.csv("analytic_data.csv", dataset_to_csv(ds))
    run.csv("closed_form.csv", _rows_csv(["im", "k", "exceedance_prob"],
                                         _curve_rows(grid, closed_form_curves(psdm, cap, grid))))
    run.flush()
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _common(p, model_list: bool = True, needs_input: bool = True):
    if needs_input:
        p.add_argument("--input", required=True, help="CSV with header im,ds")
    if model_list:
        p.add_argument("--models", default="cum", help="comma-separated names or 'all'")
    p.add_argument("--K", type=int, default=5, help="number of damage states")
    p.add_argument("--link", default="probit", choices=["probit", "logit", "cloglog"])
    p.add_argument("--unsafe", action="store_true", help="allow cum+cs (may give negative probabilities)")
    p.add_argument("--seed", type=int, default=None, help="random seed (required for stochastic runs)")
    p.add_argument("--output", default=None, help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")


def _mcmc_args(p):
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--thin", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ordfrag", description="Ordinal-regression fragility curves")
    parser.add_argument("--version", action="version", version=f"ordfrag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit models by maximum likelihood or MCMC")
    _common(p)
    _mcmc_args(p)
    p.add_argument("--mode", choices=["mle", "bayes"], default="mle")
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="PSIS-LOO comparison table")
    _common(p)
    _mcmc_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("diagnose", help="surrogate residuals and parallel-slopes check")
    _common(p, model_list=False)
    p.add_argument("--model", default="cum")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--split", default="1,2,3:3,4,5", help="low:high category groups")
    p.add_argument("--split-mode", choices=["collapse", "drop"], default="collapse")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("curves", help="fragility and category-probability grids")
    _common(p, model_list=False)
    _mcmc_args(p)
    p.add_argument("--model", default="cum")
    p.add_argument("--mode", choices=["mle", "bayes"], default="mle")
    p.add_argument("--im-grid", default="0.05:2.0:40", help="lo:hi:n (log-spaced) or comma list")
    p.add_argument("--facets", default=",".join(str(v) for v in FACET_IMS))
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--convention", choices=["strict", "geq"], default="strict")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("simulate", help="simulate a dataset from a model")
    _common(p, model_list=False, needs_input=False)
    p.add_argument("--model", default="cum")
    p.add_argument("--params", required=True, help='JSON file or literal {"tau": [...], "beta": ..., "gamma": ...}')
    p.add_argument("--n", type=int, default=442)
    p.add_argument("--im-min", type=float, default=0.05)
    p.add_argument("--im-max", type=float, default=2.0)
    p.add_argument("--im-grid", default=None, help="explicit im values instead of random ones")
    p.add_argument("--name", default="simulated.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analytic", help="closed-form curves and sampled damage states")
    _common(p, model_list=False, needs_input=False)
    p.add_argument("--config", required=True, help="JSON with psdm and capacity blocks")
    p.add_argument("--correlation", type=float, default=0.8)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--im-min", type=float, default=0.05)
    p.add_argument("--im-max", type=float, default=2.0)
    p.add_argument("--im-grid", default="0.05:2.0:40")
    p.set_defaults(func=cmd_analytic)
    return parser


STOCHASTIC = {"compare", "diagnose", "simulate", "analytic"}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    needs_seed = args.command in STOCHASTIC or getattr(args, "mode", "mle") == "bayes"
    try:
        if needs_seed and args.seed is None:
            raise UsageError(f"{args.command} is stochastic; pass --seed")
        if args.seed is None:
            args.seed = 0
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
